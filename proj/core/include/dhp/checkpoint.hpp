#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dhp/backbones.hpp"
#include "dhp/pruner.hpp"

namespace dhp {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kCheckpointFormat = "dhp-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Self-describing JSON container: format tag and version, the network
/// description, the mask record (latent name, kept bits), per-layer group
/// counts and named tensors with shapes. Values round-trip exactly.
struct Checkpoint {
  std::string phase;
  ExplicitNetwork network;
  std::vector<PruningMask> masks;
  std::vector<std::string> latent_names;
};

void save_checkpoint(const std::filesystem::path& path, const ExplicitNetwork& network,
                     std::span<const PruningMask> masks, const std::string& phase);

/// Throws CheckpointError on unknown format, unsupported version or
/// malformed content.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dhp
