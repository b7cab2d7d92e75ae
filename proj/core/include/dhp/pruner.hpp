#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dhp/backbones.hpp"
#include "dhp/sharegraph.hpp"

namespace dhp {

struct PruningMask {
  LatentId latent = 0;
  std::vector<std::uint8_t> bits;

  std::size_t popcount() const;
  /// Indices of the kept elements, ascending.
  std::vector<std::size_t> kept() const;
  friend bool operator==(const PruningMask&, const PruningMask&) = default;
};

/// One mask per latent, indexed by latent id. Latents in one mask group are
/// thresholded on the l2 norm across the group and receive identical bits.
/// Non-sparsifiable latents are all ones. If a sparsifiable latent would lose
/// every element, its largest-magnitude element is kept.
/// Throws std::invalid_argument unless tau > 0.
std::vector<PruningMask> derive_masks(const SharingGraph& graph,
                                      std::span<const LatentVector> latents, double tau);

/// All-ones masks for every latent of the graph.
std::vector<PruningMask> full_masks(const SharingGraph& graph);

/// Mask of a binding: the segment masks concatenated, each bit repeated.
std::vector<std::uint8_t> binding_mask(std::span<const PruningMask> masks,
                                       const LatentBinding& binding);

/// Kept output channels of layer `layer`.
std::vector<std::size_t> surviving_channels(const SharingGraph& graph,
                                            std::span<const PruningMask> masks,
                                            std::size_t layer);

struct LayerCount {
  std::string id;
  std::size_t out_full = 0, out_masked = 0;
  std::size_t params_full = 0, params_masked = 0;
  std::size_t flops_full = 0, flops_masked = 0;
};

struct CompressionAccount {
  std::size_t flops_full = 0;
  std::size_t flops_masked = 0;
  std::size_t params_full = 0;
  std::size_t params_masked = 0;
  std::vector<LayerCount> layers;

  double flops_ratio() const;
  double params_ratio() const;
};

/// Per conv layer with n' kept outputs and c' kept inputs per group:
/// params = n' c' kh kw (+ n' bias, + 2 n' batch norm), and
/// flops = flops_per_mac * n' c' kh kw Ho Wo.
/// Throws std::invalid_argument if a mask does not match its latent.
CompressionAccount account(const SharingGraph& graph, std::span<const PruningMask> masks,
                           std::size_t flops_per_mac = 1);

inline constexpr double kStopTolerance = 0.02;

/// True iff |flops ratio - target| < 0.02. Throws unless target in (0, 1).
bool should_stop(const CompressionAccount& account, double target_ratio);

/// Explicit network whose weights are the surviving slices of the generated
/// weights; biases and batch-norm parameters and statistics are sliced by the
/// output mask, depthwise groups shrink to the kept channel count.
ExplicitNetwork materialize(const HyperModel& model, std::span<const PruningMask> masks);

}  // namespace dhp
