#include "prf/run.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "prf/error.hpp"

namespace prf {
namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) cols.push_back(line.substr(start, i - start));
  }
  return cols;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

std::vector<std::string> RunList::query_ids() const {
  std::vector<std::string> ids;
  std::unordered_set<std::string> seen;
  for (const auto& e : entries) {
    if (seen.insert(e.query_id).second) ids.push_back(e.query_id);
  }
  return ids;
}

void RunList::validate() const {
  std::map<std::string, std::vector<const RunEntry*>> by_query;
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& e : entries) {
    if (!pairs.emplace(e.query_id, e.doc_id).second) {
      throw InputError("duplicate run entry " + e.query_id + " " + e.doc_id);
    }
    by_query[e.query_id].push_back(&e);
  }
  for (auto& [qid, list] : by_query) {
    std::sort(list.begin(), list.end(),
              [](const RunEntry* a, const RunEntry* b) { return a->rank < b->rank; });
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (list[i]->rank != static_cast<int>(i + 1)) {
        throw InputError("ranks of query " + qid + " are not contiguous from 1");
      }
      if (i > 0 && list[i]->score > list[i - 1]->score) {
        throw InputError("scores of query " + qid + " increase with rank");
      }
    }
  }
}

std::string format_run_line(const RunEntry& e) {
  char score[64];
  std::snprintf(score, sizeof(score), "%.6f", e.score);
  std::string line;
  line.reserve(e.query_id.size() + e.doc_id.size() + e.tag.size() + 32);
  line += e.query_id;
  line += " Q0 ";
  line += e.doc_id;
  line += ' ';
  line += std::to_string(e.rank);
  line += ' ';
  line += score;
  line += ' ';
  line += e.tag;
  return line;
}

void write_run(const RunList& run, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& e : run.entries) out << format_run_line(e) << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

RunList read_run(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("no such file: " + path.string());
  RunList run;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto cols = split_ws(line);
    if (cols.empty()) continue;
    RunEntry e;
    double score = 0.0;
    if (cols.size() != 6 || !parse_number(cols[3], e.rank) || !parse_number(cols[4], score)) {
      throw InputError("malformed run line " + std::to_string(line_no));
    }
    e.query_id = cols[0];
    e.doc_id = cols[2];
    e.score = score;
    e.tag = cols[5];
    run.entries.push_back(std::move(e));
  }
  return run;
}

}  // namespace prf
