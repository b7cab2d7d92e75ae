#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dhp/autodiff.hpp"
#include "dhp/hypernet.hpp"
#include "dhp/ops.hpp"
#include "dhp/sharegraph.hpp"

namespace dhp {

/// Trainable per-channel parameters that live next to a conv weight.
/// Unused members stay undefined.
struct ConvExtras {
  Var bias;
  Var gamma;
  Var beta;
  ops::BatchNormBuffers buffers;
};

/// What the family interpreter needs to run one conv layer.
struct ConvBinding {
  Var weight;
  ConvExtras* extras = nullptr;
  std::size_t groups = 1;
};

/// Runs the backbone of `graph`'s family over `x` using the given per-layer
/// weights (one entry per graph layer, in graph order). Classification
/// families return logits [N, K]; the upsampler returns [N, K, H*r, W*r].
Var run_backbone(const NetDescription& desc, const SharingGraph& graph,
                 std::span<ConvBinding> layers, const Var& x, bool training);

/// Backbone whose conv weights are regenerated by per-layer hypernetworks on
/// every forward pass.
class HyperModel {
 public:
  HyperModel(const NetDescription& desc, std::uint64_t seed,
             std::size_t embedding = HyperLayer::kDefaultEmbedding);

  const NetDescription& description() const { return desc_; }
  const SharingGraph& graph() const { return graph_; }
  std::vector<LatentVector>& latents() { return latents_; }
  const std::vector<LatentVector>& latents() const { return latents_; }
  std::vector<HyperLayer>& hyperlayers() { return hyper_; }
  const std::vector<HyperLayer>& hyperlayers() const { return hyper_; }
  std::vector<ConvExtras>& extras() { return extras_; }
  const std::vector<ConvExtras>& extras() const { return extras_; }

  /// The concatenated, repeat-interleaved latent vector of a binding.
  Var binding_vector(const LatentBinding& binding) const;
  /// Weight of every layer, in graph order.
  std::vector<Var> generate_weights() const;
  Var forward(const Var& x, bool training);

  /// Hypernetwork parameters, then biases and BN affine parameters.
  /// Latents are excluded: they follow the proximal update.
  std::vector<Var> parameters() const;
  std::vector<Var> latent_vars() const;

 private:
  NetDescription desc_;
  SharingGraph graph_;
  std::vector<LatentVector> latents_;
  std::vector<HyperLayer> hyper_;
  std::vector<ConvExtras> extras_;
};

/// Standalone network with explicit weights; the result of materialization.
/// The graph keeps the unpruned layer geometry; the actual channel counts are
/// those of the weights.
class ExplicitNetwork {
 public:
  struct Layer {
    Var weight;
    ConvExtras extras;
    std::size_t groups = 1;
  };

  ExplicitNetwork(NetDescription desc, std::vector<Layer> layers);

  const NetDescription& description() const { return desc_; }
  const SharingGraph& graph() const { return graph_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  Var forward(const Var& x, bool training);
  std::vector<Var> parameters() const;
  /// Output channels of every layer.
  std::vector<std::size_t> channels() const;

 private:
  NetDescription desc_;
  SharingGraph graph_;
  std::vector<Layer> layers_;
};

enum class TaskKind { kClusters, kBlur };

/// Deterministic toy data. Clusters: per-class smooth prototype images plus
/// Gaussian pixel noise. Blur: a fixed 3x3 box blur of random smooth images,
/// nearest-upsampled by `upscale` when it exceeds 1.
struct SyntheticTask {
  TaskKind kind = TaskKind::kClusters;
  std::uint64_t seed = 0;
  std::size_t train = 2000;
  std::size_t val = 500;
  double noise = 1.0;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t classes = 10;
  std::size_t upscale = 1;

  void validate() const;
};

std::string to_string(TaskKind k);
TaskKind parse_task_kind(const std::string& text);

struct Dataset {
  Tensor train_x;
  Tensor val_x;
  std::vector<int> train_labels;  // classification
  std::vector<int> val_labels;
  Tensor train_y;  // regression targets
  Tensor val_y;

  bool is_regression() const { return !train_y.empty(); }
};

Dataset gen_task(const SyntheticTask& task);

/// Rows `index` of a [N, ...] tensor.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> index);

/// 3x3 box blur with zero padding, per channel.
Tensor blur3x3(const Tensor& images);
/// Nearest-neighbour upsampling by an integer factor.
Tensor upsample_nearest(const Tensor& images, std::size_t r);

}  // namespace dhp
