#include "prf/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>

#include "prf/error.hpp"

namespace prf {
namespace {

constexpr std::array<std::string_view, special::kFirstRegularId> kSpecials = {
    "[CLS]", "[SEP]", "[MASK]", "[PAD]", "[UNK]", "[Q]", "[D]"};

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_ascii_punct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
         (c >= 123 && c <= 126);
}

char32_t fold_code_point(char32_t c) {
  if (c < 0x80) return (c >= 'A' && c <= 'Z') ? c + 32 : c;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
  if (c >= 0x100 && c <= 0x17F) {
    if (c == 0x130 || c == 0x131 || c == 0x138 || c == 0x149) return c;
    if (c == 0x178) return 0xFF;
    if (c == 0x17F) return 's';
    const bool odd_upper = (c >= 0x139 && c <= 0x148) || (c >= 0x179 && c <= 0x17E);
    if (odd_upper) return (c % 2 == 1) ? c + 1 : c;
    return (c % 2 == 0) ? c + 1 : c;
  }
  if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 32;
  if (c == 0x386) return 0x3AC;
  if (c >= 0x388 && c <= 0x38A) return c + 37;
  if (c == 0x38C) return 0x3CC;
  if (c == 0x38E || c == 0x38F) return c + 63;
  if (c == 0x3C2) return 0x3C3;
  if (c >= 0x410 && c <= 0x42F) return c + 32;
  if (c >= 0x400 && c <= 0x40F) return c + 80;
  return c;
}

// Decodes one well-formed UTF-8 sequence starting at text[i]; returns its
// length, or 0 when the bytes are not well-formed.
std::size_t decode_utf8(std::string_view text, std::size_t i, char32_t& out) {
  const auto b0 = static_cast<unsigned char>(text[i]);
  std::size_t len = 0;
  char32_t cp = 0;
  if (b0 < 0x80) {
    out = b0;
    return 1;
  } else if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return 0;
  }
  if (i + len > text.size()) return 0;
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(text[i + k]);
    if ((b & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (b & 0x3F);
  }
  out = cp;
  return len;
}

void append_utf8(std::string& out, char32_t c) {
  if (c < 0x80) {
    out.push_back(static_cast<char>(c));
  } else if (c < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (c >> 6)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else if (c < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (c >> 12)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (c >> 18)));
    out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  }
}

}  // namespace

Vocab::Vocab(std::vector<std::string> regular) {
  id_to_token_.reserve(kSpecials.size() + regular.size());
  for (std::string_view s : kSpecials) id_to_token_.emplace_back(s);
  for (auto& t : regular) id_to_token_.push_back(std::move(t));
  token_to_id_.reserve(id_to_token_.size());
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    const std::string& t = id_to_token_[i];
    if (t.empty()) throw InputError("empty token at vocabulary id " + std::to_string(i));
    if (!token_to_id_.emplace(t, static_cast<TokenId>(i)).second) {
      throw InputError("duplicate vocabulary token " + t);
    }
  }
}

const std::string& Vocab::token(TokenId id) const {
  if (id >= id_to_token_.size()) throw InputError("token id out of range: " + std::to_string(id));
  return id_to_token_[id];
}

TokenId Vocab::id(std::string_view token) const {
  const auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? special::kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return token_to_id_.find(token) != token_to_id_.end();
}

std::span<const std::string_view> Vocab::special_tokens() noexcept { return kSpecials; }

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& t : id_to_token_) out << t << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("no such file: " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
  if (lines.size() < kSpecials.size() ||
      !std::equal(kSpecials.begin(), kSpecials.end(), lines.begin())) {
    throw InputError("not a vocab file: " + path.string());
  }
  return Vocab(std::vector<std::string>(lines.begin() + kSpecials.size(), lines.end()));
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c) || is_ascii_punct(c)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
      if (is_ascii_punct(c)) words.emplace_back(1, ch);
    } else {
      current.push_back(ch);
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::string fold_case(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    char32_t cp = 0;
    const std::size_t len = decode_utf8(text, i, cp);
    if (len == 0) {
      out.push_back(text[i]);
      ++i;
      continue;
    }
    append_utf8(out, fold_code_point(cp));
    i += len;
  }
  return out;
}

Vocab build_vocab(std::span<const std::string> corpus_texts, int min_count) {
  if (corpus_texts.empty()) throw InputError("empty corpus");
  if (min_count < 1) throw InputError("min_count must be >= 1");
  std::map<std::string, std::int64_t> counts;
  for (const auto& text : corpus_texts) {
    for (auto& word : split_words(text)) {
      std::string folded = fold_case(word);
      if (folded != word) ++counts[std::move(folded)];
      ++counts[std::move(word)];
    }
  }
  std::vector<std::pair<std::string, std::int64_t>> kept;
  for (auto& [token, n] : counts) {
    if (n >= min_count) kept.emplace_back(token, n);
  }
  // std::map iteration is already byte-ordered; stable_sort keeps that for ties.
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> regular;
  regular.reserve(kept.size());
  for (auto& [token, n] : kept) regular.push_back(std::move(token));
  return Vocab(std::move(regular));
}

TokenSequence tokenize(std::string_view text, const Vocab& vocab, CasePolicy policy) {
  TokenSequence seq;
  seq.policy_used = policy;
  const std::string folded = policy == CasePolicy::Lowercase ? fold_case(text) : std::string();
  const std::string_view source = policy == CasePolicy::Lowercase ? std::string_view(folded) : text;
  for (const auto& word : split_words(source)) seq.ids.push_back(vocab.id(word));
  return seq;
}

std::string detokenize(const TokenSequence& tokens, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += vocab.token(tokens.ids[i]);
  }
  return out;
}

CasePolicy parse_case_policy(std::string_view name) {
  if (name == "preserve") return CasePolicy::Preserve;
  if (name == "lower" || name == "lowercase") return CasePolicy::Lowercase;
  throw InputError("unknown case policy: " + std::string(name));
}

std::string_view to_string(CasePolicy policy) noexcept {
  return policy == CasePolicy::Preserve ? "preserve" : "lower";
}

}  // namespace prf
