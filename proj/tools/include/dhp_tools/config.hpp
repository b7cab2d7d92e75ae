#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "dhp/pipeline.hpp"

namespace dhp::tools {

/// The config file is missing, unreadable, or inconsistent.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Environment variable naming the default output root.
inline constexpr const char* kOutDirEnv = "DHP_OUT_DIR";

/// Command-line overrides; set fields win over the file.
struct Overrides {
  std::optional<double> target;
  std::optional<double> lambda;
  std::optional<double> tau;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  bool baseline = false;
};

/// Parses YAML text. Unknown keys are rejected. Task image shape, class
/// count and upscale factor follow the `net` section.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Applies overrides, then resolves the output directory:
/// --out, else `output` from the file, else $DHP_OUT_DIR/<name>, else
/// ./dhp-out/<name>. Validates the result.
RunConfig finalize(RunConfig config, const Overrides& overrides);

std::filesystem::path default_out_root();

}  // namespace dhp::tools
