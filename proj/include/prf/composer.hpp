#pragma once

#include <span>
#include <string_view>

#include "prf/tokenizer.hpp"

namespace prf {

enum class TemplateKind {
  AnceStyle,  // <s> q </s> d1 </s> ... dk </s>
  TctStyle,   // [CLS] [Q] q [SEP] d1 [SEP] ... dk [MASK]... up to max_len
  DbertStyle  // [CLS] q [SEP] d1 [SEP] ... dk [SEP]
};

class PrfTemplate {
 public:
  static constexpr std::size_t kDefaultMaxLen = 512;

  explicit PrfTemplate(TemplateKind kind,
                       std::size_t max_len = kDefaultMaxLen);

  TemplateKind kind() const noexcept { return kind_; }
  std::size_t max_len() const noexcept { return max_len_; }

 private:
  TemplateKind kind_;
  std::size_t max_len_;
};

/// Number of feedback documents, 1..20.
class PrfDepth {
 public:
  static constexpr int kMax = 20;
  explicit PrfDepth(int k);
  int k() const noexcept { return k_; }

 private:
  int k_;
};

/// Builds the feedback query. Overflow is cut from the end of the
/// concatenation; the query itself is never cut.
TokenSequence compose(const TokenSequence& query,
                      std::span<const TokenSequence> docs,
                      const PrfTemplate& tmpl, PrfDepth depth);

/// First-round query input: BOS, query, SEP.
TokenSequence compose_query(const TokenSequence& query, std::size_t max_len);

/// Document-side input for the index: BOS doc SEP (ance, dbert) or
/// BOS [D] doc (tct), truncated to max_len.
TokenSequence compose_document(const TokenSequence& doc,
                               const PrfTemplate& tmpl);

TemplateKind parse_template_kind(std::string_view name);
std::string_view to_string(TemplateKind kind) noexcept;

}  // namespace prf
