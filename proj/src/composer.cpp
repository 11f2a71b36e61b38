#include "prf/composer.hpp"

#include <string>

#include "prf/error.hpp"

namespace prf {

PrfTemplate::PrfTemplate(TemplateKind kind, std::size_t max_len)
    : kind_(kind), max_len_(max_len) {
  if (max_len < 8) throw InputError("template max_len must be >= 8");
}

PrfDepth::PrfDepth(int k) : k_(k) {
  if (k < 1 || k > kMax) {
    throw InputError("prf depth must be in [1, " + std::to_string(kMax) + "], got " +
                     std::to_string(k));
  }
}

TokenSequence compose(const TokenSequence& query, std::span<const TokenSequence> docs,
                      const PrfTemplate& tmpl, PrfDepth depth) {
  const auto k = static_cast<std::size_t>(depth.k());
  if (docs.size() < k) throw InputError("insufficient feedback");

  TokenSequence out;
  out.policy_used = query.policy_used;
  auto& ids = out.ids;
  ids.push_back(special::kBos);
  if (tmpl.kind() == TemplateKind::TctStyle) ids.push_back(special::kQueryMarker);
  ids.insert(ids.end(), query.ids.begin(), query.ids.end());
  ids.push_back(special::kSep);
  if (ids.size() > tmpl.max_len()) throw InputError("query too long");

  for (std::size_t i = 0; i < k && ids.size() < tmpl.max_len(); ++i) {
    ids.insert(ids.end(), docs[i].ids.begin(), docs[i].ids.end());
    const bool last = i + 1 == k;
    // TctStyle joins documents with SEP and leaves the last one open.
    if (!(last && tmpl.kind() == TemplateKind::TctStyle)) ids.push_back(special::kSep);
  }
  if (ids.size() > tmpl.max_len()) ids.resize(tmpl.max_len());
  if (tmpl.kind() == TemplateKind::TctStyle) ids.resize(tmpl.max_len(), special::kMask);
  return out;
}

TokenSequence compose_query(const TokenSequence& query, std::size_t max_len) {
  if (query.size() + 2 > max_len) throw InputError("query too long");
  TokenSequence out;
  out.policy_used = query.policy_used;
  out.ids.reserve(query.size() + 2);
  out.ids.push_back(special::kBos);
  out.ids.insert(out.ids.end(), query.ids.begin(), query.ids.end());
  out.ids.push_back(special::kSep);
  return out;
}

TokenSequence compose_document(const TokenSequence& doc, const PrfTemplate& tmpl) {
  TokenSequence out;
  out.policy_used = doc.policy_used;
  out.ids.push_back(special::kBos);
  if (tmpl.kind() == TemplateKind::TctStyle) out.ids.push_back(special::kDocMarker);
  out.ids.insert(out.ids.end(), doc.ids.begin(), doc.ids.end());
  if (tmpl.kind() != TemplateKind::TctStyle) out.ids.push_back(special::kSep);
  if (out.ids.size() > tmpl.max_len()) out.ids.resize(tmpl.max_len());
  return out;
}

TemplateKind parse_template_kind(std::string_view name) {
  if (name == "ance") return TemplateKind::AnceStyle;
  if (name == "tct") return TemplateKind::TctStyle;
  if (name == "dbert") return TemplateKind::DbertStyle;
  throw InputError("unknown template: " + std::string(name));
}

std::string_view to_string(TemplateKind kind) noexcept {
  switch (kind) {
    case TemplateKind::AnceStyle: return "ance";
    case TemplateKind::TctStyle: return "tct";
    case TemplateKind::DbertStyle: return "dbert";
  }
  return "unknown";
}

}  // namespace prf
