#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "json.hpp"
#include "prf/composer.hpp"
#include "prf/tokenizer.hpp"
#include "prf/trainer.hpp"

namespace prf::cli {

/// Paths and retrieval settings shared by the subcommands. Loaded from a JSON
/// config file; command-line flags override individual fields.
struct WorkspaceConfig {
  std::string vocab;
  std::string corpus;
  std::string queries;
  std::string qrels;
  std::string index;
  std::string params;
  std::string prf_params;
  TemplateKind template_kind = TemplateKind::AnceStyle;
  CasePolicy case_policy = CasePolicy::Preserve;
  int prf_depth = 3;
  std::size_t topk = 1000;
  std::optional<std::uint64_t> seed;
  TrainConfig train;

  /// Unknown keys and malformed values throw prf::InputError.
  static WorkspaceConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeFailure = 1;
inline constexpr int kUsage = 2;

/// Entry point of the command-line tool. Never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace prf::cli
