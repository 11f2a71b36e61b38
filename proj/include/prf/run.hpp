#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace prf {

struct RunEntry {
  std::string query_id;
  std::string doc_id;
  int rank = 0;
  double score = 0.0;
  std::string tag;
  friend bool operator==(const RunEntry&, const RunEntry&) = default;
};

/// Ranked results for a set of queries, kept in file/insertion order.
struct RunList {
  std::vector<RunEntry> entries;

  /// Query ids in order of first appearance.
  std::vector<std::string> query_ids() const;

  /// Throws prf::InputError when a query's ranks are not contiguous from 1,
  /// its scores increase with rank, or a (query, doc) pair repeats.
  void validate() const;

  friend bool operator==(const RunList&, const RunList&) = default;
};

/// "qid Q0 docid rank score tag" with the score printed to six decimals.
std::string format_run_line(const RunEntry& entry);
void write_run(const RunList& run, const std::filesystem::path& path);
/// Throws prf::InputError "malformed run line <n>" (1-based).
RunList read_run(const std::filesystem::path& path);

}  // namespace prf
