#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace prf {

using TokenId = std::uint32_t;

enum class CasePolicy { Preserve, Lowercase };

/// Reserved ids. Specials occupy the first slots of every vocabulary in this
/// fixed order, so regular tokens start at kFirstRegularId.
namespace special {
inline constexpr TokenId kBos = 0;    // <s> / [CLS]
inline constexpr TokenId kSep = 1;    // </s> / [SEP]
inline constexpr TokenId kMask = 2;
inline constexpr TokenId kPad = 3;
inline constexpr TokenId kUnk = 4;
inline constexpr TokenId kQueryMarker = 5;  // [Q]
inline constexpr TokenId kDocMarker = 6;    // [D]
inline constexpr TokenId kFirstRegularId = 7;
}  // namespace special

struct TokenSequence {
  std::vector<TokenId> ids;
  CasePolicy policy_used = CasePolicy::Preserve;

  std::size_t size() const noexcept { return ids.size(); }
  bool empty() const noexcept { return ids.empty(); }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Closed token inventory. Immutable once constructed.
class Vocab {
 public:
  /// Specials are prepended; `regular` must not repeat a token or a special.
  explicit Vocab(std::vector<std::string> regular);

  std::size_t size() const noexcept { return id_to_token_.size(); }
  const std::string& token(TokenId id) const;
  /// Id of `token`, or kUnk when absent.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;

  std::span<const std::string> tokens() const noexcept { return id_to_token_; }

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  static std::span<const std::string_view> special_tokens() noexcept;

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const noexcept {
      return std::hash<std::string_view>{}(s);
    }
  };
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId, Hash, std::equal_to<>> token_to_id_;
};

/// Splits on whitespace; every ASCII punctuation character becomes its own
/// token. Bytes >= 0x80 are word characters.
std::vector<std::string> split_words(std::string_view text);

/// Simple case folding: ASCII plus the Latin-1, Latin Extended-A, Greek and
/// Cyrillic blocks. Invalid UTF-8 bytes pass through unchanged.
std::string fold_case(std::string_view text);

/// Counts every split token in its original form and, when different, its
/// folded form; keeps those with frequency >= min_count. Regular ids are
/// assigned by descending frequency, ties broken by byte order.
Vocab build_vocab(std::span<const std::string> corpus_texts, int min_count);

TokenSequence tokenize(std::string_view text, const Vocab& vocab,
                       CasePolicy policy);

/// Space-joined token strings.
std::string detokenize(const TokenSequence& tokens, const Vocab& vocab);

CasePolicy parse_case_policy(std::string_view name);
std::string_view to_string(CasePolicy policy) noexcept;

}  // namespace prf
