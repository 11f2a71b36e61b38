#include "prf/pipeline.hpp"

#include <fstream>
#include <unordered_set>

#include "prf/error.hpp"
#include "prf/util.hpp"

namespace prf {

std::vector<TextRecord> read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("no such file: " + path.string());
  std::vector<TextRecord> records;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw InputError("malformed line " + std::to_string(line_no) + " in " + path.string());
    }
    TextRecord r{line.substr(0, tab), line.substr(tab + 1)};
    if (!seen.insert(r.id).second) {
      throw InputError("duplicate id " + r.id + " at line " + std::to_string(line_no) + " in " +
                       path.string());
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_tsv(std::span<const TextRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& r : records) out << r.id << '\t' << r.text << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

DocumentStore::DocumentStore(std::span<const TextRecord> records) {
  texts_.reserve(records.size());
  for (const auto& r : records) texts_.emplace(r.id, r.text);
}

const std::string* DocumentStore::find(const std::string& doc_id) const {
  const auto it = texts_.find(doc_id);
  return it == texts_.end() ? nullptr : &it->second;
}

std::vector<SearchResult> first_round(std::string_view query_text, const Vocab& vocab,
                                      const EncoderParams& base, const VectorIndex& index,
                                      std::size_t k, CasePolicy policy) {
  const TokenSequence query = tokenize(query_text, vocab, policy);
  const TokenSequence input =
      compose_query(query, static_cast<std::size_t>(base.config.max_len));
  return index.search(encode(base, input), k);
}

TokenSequence compose_feedback_query(std::string_view query_text,
                                     std::span<const SearchResult> first_round,
                                     const Vocab& vocab, const DocumentStore& docs,
                                     PrfDepth depth, const PrfTemplate& tmpl,
                                     CasePolicy policy) {
  const auto k = std::min(first_round.size(), static_cast<std::size_t>(depth.k()));
  std::vector<TokenSequence> feedback;
  feedback.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::string* text = docs.find(first_round[i].doc_id);
    if (text == nullptr) throw InputError("feedback text unavailable: " + first_round[i].doc_id);
    feedback.push_back(tokenize(*text, vocab, policy));
  }
  return compose(tokenize(query_text, vocab, policy), feedback, tmpl, depth);
}

PrfTrace prf_retrieve_traced(std::string_view query_text, const Vocab& vocab,
                             const EncoderParams& base, const EncoderParams& prf,
                             const VectorIndex& index, const DocumentStore& docs,
                             PrfDepth depth, const PrfTemplate& tmpl, std::size_t k,
                             CasePolicy policy) {
  if (static_cast<std::size_t>(depth.k()) > k) {
    throw InputError("prf depth " + std::to_string(depth.k()) + " exceeds topk " +
                     std::to_string(k));
  }
  if (tmpl.max_len() > static_cast<std::size_t>(prf.config.max_len)) {
    throw InputError("template max_len exceeds the encoder's max_len");
  }
  PrfTrace trace;
  trace.first_round = first_round(query_text, vocab, base, index, k, policy);
  trace.prf_query =
      compose_feedback_query(query_text, trace.first_round, vocab, docs, depth, tmpl, policy);
  trace.results = index.search(encode(prf, trace.prf_query), k);
  return trace;
}

std::vector<SearchResult> prf_retrieve(std::string_view query_text, const Vocab& vocab,
                                       const EncoderParams& base, const EncoderParams& prf,
                                       const VectorIndex& index, const DocumentStore& docs,
                                       PrfDepth depth, const PrfTemplate& tmpl, std::size_t k,
                                       CasePolicy policy) {
  return prf_retrieve_traced(query_text, vocab, base, prf, index, docs, depth, tmpl, k, policy)
      .results;
}

std::string default_run_tag(PrfDepth depth) { return "prf" + std::to_string(depth.k()); }

namespace {

RunList to_run(std::span<const TextRecord> queries,
               const std::vector<std::vector<SearchResult>>& results, const std::string& tag) {
  RunList run;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (const auto& r : results[q]) {
      run.entries.push_back({queries[q].id, r.doc_id, r.rank, r.score, tag});
    }
  }
  return run;
}

}  // namespace

RunList run_first_round(std::span<const TextRecord> queries, const Vocab& vocab,
                        const EncoderParams& base, const VectorIndex& index, std::size_t k,
                        CasePolicy policy, const std::string& tag) {
  std::vector<std::vector<SearchResult>> results(queries.size());
  parallel_for(queries.size(), [&](std::size_t i) {
    results[i] = first_round(queries[i].text, vocab, base, index, k, policy);
  });
  return to_run(queries, results, tag);
}

RunList run_prf(std::span<const TextRecord> queries, const Vocab& vocab,
                const EncoderParams& base, const EncoderParams& prf, const VectorIndex& index,
                const DocumentStore& docs, PrfDepth depth, const PrfTemplate& tmpl,
                std::size_t k, CasePolicy policy, const std::string& tag) {
  std::vector<std::vector<SearchResult>> results(queries.size());
  parallel_for(queries.size(), [&](std::size_t i) {
    results[i] =
        prf_retrieve(queries[i].text, vocab, base, prf, index, docs, depth, tmpl, k, policy);
  });
  return to_run(queries, results, tag);
}

VectorIndex encode_corpus(std::span<const TextRecord> corpus, const Vocab& vocab,
                          const EncoderParams& params, const PrfTemplate& tmpl,
                          CasePolicy policy) {
  if (tmpl.max_len() > static_cast<std::size_t>(params.config.max_len)) {
    throw InputError("template max_len exceeds the encoder's max_len");
  }
  std::vector<Embedding> embeddings(corpus.size());
  parallel_for(corpus.size(), [&](std::size_t i) {
    embeddings[i] =
        encode(params, compose_document(tokenize(corpus[i].text, vocab, policy), tmpl));
  });
  std::vector<std::pair<std::string, Embedding>> pairs;
  pairs.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    pairs.emplace_back(corpus[i].id, std::move(embeddings[i]));
  }
  return VectorIndex::build(std::move(pairs));
}

}  // namespace prf
