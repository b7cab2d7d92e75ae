#include "dhp/pruner.hpp"

#include <cmath>
#include <stdexcept>

namespace dhp {

std::size_t PruningMask::popcount() const {
  std::size_t n = 0;
  for (auto b : bits) n += b;
  return n;
}

std::vector<std::size_t> PruningMask::kept() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) out.push_back(i);
  }
  return out;
}

std::vector<PruningMask> full_masks(const SharingGraph& graph) {
  std::vector<PruningMask> out;
  for (std::size_t i = 0; i < graph.latents().size(); ++i) {
    out.push_back({i, std::vector<std::uint8_t>(graph.latents()[i].dim, 1)});
  }
  return out;
}

std::vector<PruningMask> derive_masks(const SharingGraph& graph,
                                      std::span<const LatentVector> latents, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("mask threshold must be positive");
  if (latents.size() != graph.latents().size()) {
    throw std::invalid_argument("derive_masks: latent count does not match the graph");
  }
  std::vector<PruningMask> masks = full_masks(graph);
  for (const auto& group : graph.mask_groups()) {
    const LatentInfo& info = graph.latents()[group.front()];
    if (!info.sparsifiable) continue;
    std::vector<double> norm(info.dim, 0.0);
    for (LatentId id : group) {
      const Tensor& z = latents[id].values.value();
      if (z.numel() != info.dim) throw std::invalid_argument("derive_masks: latent dimension");
      for (std::size_t j = 0; j < info.dim; ++j) norm[j] += z[j] * z[j];
    }
    std::vector<std::uint8_t> bits(info.dim, 0);
    std::size_t best = 0;
    bool any = false;
    for (std::size_t j = 0; j < info.dim; ++j) {
      norm[j] = std::sqrt(norm[j]);
      bits[j] = norm[j] >= tau ? 1 : 0;
      any = any || bits[j];
      if (norm[j] > norm[best]) best = j;
    }
    if (!any) bits[best] = 1;
    for (LatentId id : group) masks[id].bits = bits;
  }
  return masks;
}

std::vector<std::uint8_t> binding_mask(std::span<const PruningMask> masks,
                                       const LatentBinding& binding) {
  std::vector<std::uint8_t> out;
  for (const auto& seg : binding.segments) {
    for (auto b : masks[seg.latent].bits) out.insert(out.end(), seg.repeat, b);
  }
  return out;
}

std::vector<std::size_t> surviving_channels(const SharingGraph& graph,
                                            std::span<const PruningMask> masks,
                                            std::size_t layer) {
  const auto bits = binding_mask(masks, graph.wiring().at(layer).output);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) out.push_back(i);
  }
  return out;
}

namespace {

void check_masks(const SharingGraph& graph, std::span<const PruningMask> masks) {
  if (masks.size() != graph.latents().size()) {
    throw std::invalid_argument("mask count " + std::to_string(masks.size()) + " != latent count " +
                                std::to_string(graph.latents().size()));
  }
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].latent != i || masks[i].bits.size() != graph.latents()[i].dim) {
      throw std::invalid_argument("mask for latent '" + graph.latents()[i].name +
                                  "' has inconsistent dimension");
    }
  }
}

std::size_t count_ones(const std::vector<std::uint8_t>& bits) {
  std::size_t n = 0;
  for (auto b : bits) n += b;
  return n;
}

}  // namespace

double CompressionAccount::flops_ratio() const {
  return flops_full == 0 ? 1.0 : static_cast<double>(flops_masked) / static_cast<double>(flops_full);
}

double CompressionAccount::params_ratio() const {
  return params_full == 0 ? 1.0
                          : static_cast<double>(params_masked) / static_cast<double>(params_full);
}

CompressionAccount account(const SharingGraph& graph, std::span<const PruningMask> masks,
                           std::size_t flops_per_mac) {
  check_masks(graph, masks);
  CompressionAccount acc;
  for (std::size_t i = 0; i < graph.layers().size(); ++i) {
    const LayerSpec& l = graph.layers()[i];
    const LayerWiring& w = graph.wiring()[i];
    const std::size_t n = l.out_channels, c = l.weight_in_channels();
    const std::size_t n2 = count_ones(binding_mask(masks, w.output));
    const std::size_t c2 = count_ones(binding_mask(masks, w.input));
    const std::size_t k = l.kernel_h * l.kernel_w;
    const std::size_t spatial = l.out_h * l.out_w;
    const std::size_t per_channel = (l.bias ? 1 : 0) + (l.batch_norm ? 2 : 0);
    LayerCount lc;
    lc.id = l.id;
    lc.out_full = n;
    lc.out_masked = n2;
    lc.params_full = n * c * k + n * per_channel;
    lc.params_masked = n2 * c2 * k + n2 * per_channel;
    lc.flops_full = flops_per_mac * n * c * k * spatial;
    lc.flops_masked = flops_per_mac * n2 * c2 * k * spatial;
    acc.params_full += lc.params_full;
    acc.params_masked += lc.params_masked;
    acc.flops_full += lc.flops_full;
    acc.flops_masked += lc.flops_masked;
    acc.layers.push_back(std::move(lc));
  }
  return acc;
}

bool should_stop(const CompressionAccount& account, double target_ratio) {
  if (!(target_ratio > 0.0 && target_ratio < 1.0)) {
    throw std::invalid_argument("target ratio must be in (0, 1)");
  }
  return std::abs(account.flops_ratio() - target_ratio) < kStopTolerance;
}

ExplicitNetwork materialize(const HyperModel& model, std::span<const PruningMask> masks) {
  const SharingGraph& graph = model.graph();
  check_masks(graph, masks);
  std::vector<Var> weights;
  {
    NoGradGuard guard;
    weights = model.generate_weights();
  }
  std::vector<ExplicitNetwork::Layer> layers;
  for (std::size_t i = 0; i < graph.layers().size(); ++i) {
    const LayerSpec& spec = graph.layers()[i];
    const LayerWiring& w = graph.wiring()[i];
    const auto out_bits = binding_mask(masks, w.output);
    const auto in_bits = binding_mask(masks, w.input);
    std::vector<std::size_t> keep_out, keep_in;
    for (std::size_t j = 0; j < out_bits.size(); ++j) {
      if (out_bits[j]) keep_out.push_back(j);
    }
    for (std::size_t j = 0; j < in_bits.size(); ++j) {
      if (in_bits[j]) keep_in.push_back(j);
    }
    if (keep_out.empty() || keep_in.empty()) {
      throw TopologyError("layer '" + spec.id + "' would have zero channels");
    }
    ExplicitNetwork::Layer layer;
    layer.weight = Var(select_rows_cols(weights[i].value(), keep_out, keep_in), true);
    if (spec.kind == ConvKind::kDepthwise) {
      layer.groups = keep_out.size();
    } else if (spec.groups != 1) {
      throw TopologyError("layer '" + spec.id + "': pruning group convolutions is unsupported");
    }
    const ConvExtras& src = model.extras()[i];
    auto slice = [&](const Var& v) {
      return v.defined() ? Var(select_axis0(v.value(), keep_out), true) : Var();
    };
    layer.extras.bias = slice(src.bias);
    layer.extras.gamma = slice(src.gamma);
    layer.extras.beta = slice(src.beta);
    if (spec.batch_norm) {
      layer.extras.buffers.mean = select_axis0(src.buffers.mean, keep_out);
      layer.extras.buffers.var = select_axis0(src.buffers.var, keep_out);
    }
    layers.push_back(std::move(layer));
  }
  return ExplicitNetwork(model.description(), std::move(layers));
}

}  // namespace dhp
