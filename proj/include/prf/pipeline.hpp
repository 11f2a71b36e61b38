#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "prf/composer.hpp"
#include "prf/encoder.hpp"
#include "prf/index.hpp"
#include "prf/run.hpp"
#include "prf/tokenizer.hpp"

namespace prf {

/// A "<id>\t<text>" record from a corpus or query file.
struct TextRecord {
  std::string id;
  std::string text;
};

/// Reads "id<TAB>text" lines. Blank lines are skipped; duplicate ids and
/// lines without a tab are rejected with the line number.
std::vector<TextRecord> read_tsv(const std::filesystem::path& path);
void write_tsv(std::span<const TextRecord> records, const std::filesystem::path& path);

/// Raw document text kept alongside the index for feedback composition.
class DocumentStore {
 public:
  DocumentStore() = default;
  explicit DocumentStore(std::span<const TextRecord> records);

  /// nullptr when absent.
  const std::string* find(const std::string& doc_id) const;
  std::size_t size() const noexcept { return texts_.size(); }

 private:
  std::unordered_map<std::string, std::string> texts_;
};

/// Tokenizes with BOS/SEP, encodes with `base` and searches the top k.
std::vector<SearchResult> first_round(std::string_view query_text, const Vocab& vocab,
                                      const EncoderParams& base,
                                      const VectorIndex& index, std::size_t k,
                                      CasePolicy policy);

struct PrfTrace {
  std::vector<SearchResult> first_round;
  TokenSequence prf_query;
  std::vector<SearchResult> results;
};

/// Two-round retrieval: first round with `base`, feedback composition from
/// the stored text of the top depth.k documents under the same case policy,
/// second round with `prf` against the same index. Throws prf::InputError
/// "feedback text unavailable: <id>".
PrfTrace prf_retrieve_traced(std::string_view query_text, const Vocab& vocab,
                             const EncoderParams& base, const EncoderParams& prf,
                             const VectorIndex& index, const DocumentStore& docs,
                             PrfDepth depth, const PrfTemplate& tmpl, std::size_t k,
                             CasePolicy policy);

std::vector<SearchResult> prf_retrieve(std::string_view query_text, const Vocab& vocab,
                                       const EncoderParams& base, const EncoderParams& prf,
                                       const VectorIndex& index, const DocumentStore& docs,
                                       PrfDepth depth, const PrfTemplate& tmpl,
                                       std::size_t k, CasePolicy policy);

/// Feedback query for one first-round result list.
TokenSequence compose_feedback_query(std::string_view query_text,
                                     std::span<const SearchResult> first_round,
                                     const Vocab& vocab, const DocumentStore& docs,
                                     PrfDepth depth, const PrfTemplate& tmpl,
                                     CasePolicy policy);

/// "prf<k>".
std::string default_run_tag(PrfDepth depth);

/// Batch drivers. Queries run in parallel; output keeps input query order.
RunList run_first_round(std::span<const TextRecord> queries, const Vocab& vocab,
                        const EncoderParams& base, const VectorIndex& index,
                        std::size_t k, CasePolicy policy, const std::string& tag);

RunList run_prf(std::span<const TextRecord> queries, const Vocab& vocab,
                const EncoderParams& base, const EncoderParams& prf,
                const VectorIndex& index, const DocumentStore& docs, PrfDepth depth,
                const PrfTemplate& tmpl, std::size_t k, CasePolicy policy,
                const std::string& tag);

/// Encodes every document under the template's document form and builds the
/// index. Documents are encoded in parallel, inserted in input order.
VectorIndex encode_corpus(std::span<const TextRecord> corpus, const Vocab& vocab,
                          const EncoderParams& params, const PrfTemplate& tmpl,
                          CasePolicy policy);

}  // namespace prf
