#include "dhp/backbones.hpp"

#include <stdexcept>

namespace dhp {

namespace {

class Interpreter {
 public:
  Interpreter(const NetDescription& desc, const SharingGraph& graph,
              std::span<ConvBinding> layers, bool training)
      : desc_(desc), graph_(graph), layers_(layers), training_(training) {}

  // conv -> bias -> batch norm, no activation.
  Var conv(std::string_view id, const Var& x) {
    const std::size_t i = graph_.layer_index(id);
    const LayerSpec& spec = graph_.layers()[i];
    ConvBinding& b = layers_[i];
    Var y = ops::conv2d(x, b.weight, {spec.stride, spec.padding, b.groups});
    if (spec.bias) y = ops::add_channel_bias(y, b.extras->bias);
    if (spec.batch_norm) {
      ops::BatchNormOptions opt;
      opt.training = training_;
      y = ops::batch_norm(y, b.extras->gamma, b.extras->beta, &b.extras->buffers, opt);
    }
    return y;
  }

  Var head(const Var& features) {
    Var pooled = ops::global_avg_pool(features);
    Var logits = conv("head", pooled);
    return ops::reshape(logits, {logits.shape()[0], logits.shape()[1]});
  }

  Var plain(Var x) {
    for (std::size_t i = 0; i < desc_.widths.size(); ++i) {
      x = ops::relu(conv("conv" + std::to_string(i), x));
    }
    return head(x);
  }

  Var residual(Var x) {
    x = ops::relu(conv("stem", x));
    for (std::size_t s = 0; s < desc_.widths.size(); ++s) {
      for (std::size_t blk = 0; blk < desc_.blocks; ++blk) {
        const std::string pre = "s" + std::to_string(s) + ".b" + std::to_string(blk);
        Var h = ops::relu(conv(pre + ".conv1", x));
        h = conv(pre + ".conv2", h);
        Var shortcut = (s > 0 && blk == 0) ? conv(pre + ".shortcut", x) : x;
        x = ops::relu(ops::add(h, shortcut));
      }
    }
    return head(x);
  }

  Var dense(Var x) {
    x = ops::relu(conv("stem", x));
    for (std::size_t s = 0; s < desc_.widths.size(); ++s) {
      if (s > 0) x = ops::avg_pool2d(ops::relu(conv("t" + std::to_string(s), x)), 2);
      std::vector<Var> features{x};
      for (std::size_t blk = 0; blk < desc_.blocks; ++blk) {
        const std::string id = "d" + std::to_string(s) + ".b" + std::to_string(blk) + ".conv";
        Var input = features.size() == 1 ? features[0] : ops::concat(features, 1);
        features.push_back(ops::relu(conv(id, input)));
      }
      x = ops::concat(features, 1);
    }
    return head(x);
  }

  Var inverted(Var x) {
    x = ops::relu(conv("stem", x));
    for (std::size_t s = 0; s < desc_.widths.size(); ++s) {
      for (std::size_t blk = 0; blk < desc_.blocks; ++blk) {
        const std::string pre = "s" + std::to_string(s) + ".b" + std::to_string(blk);
        Var h = ops::relu(conv(pre + ".expand", x));
        h = ops::relu(conv(pre + ".dw", h));
        h = conv(pre + ".project", h);
        const bool down = s > 0 && blk == 0;
        x = down ? h : ops::add(h, x);
      }
    }
    return head(x);
  }

  Var upsampler(Var x) {
    for (std::size_t i = 0; i < desc_.widths.size(); ++i) {
      x = ops::relu(conv("conv" + std::to_string(i), x));
    }
    x = ops::relu(ops::pixel_shuffle(conv("up", x), desc_.upscale));
    return conv("head", x);
  }

 private:
  const NetDescription& desc_;
  const SharingGraph& graph_;
  std::span<ConvBinding> layers_;
  bool training_;
};

ConvExtras make_extras(const LayerSpec& spec) {
  ConvExtras e;
  if (spec.bias) e.bias = Var(Tensor::zeros({spec.out_channels}), true);
  if (spec.batch_norm) {
    e.gamma = Var(Tensor::ones({spec.out_channels}), true);
    e.beta = Var(Tensor::zeros({spec.out_channels}), true);
    e.buffers = ops::BatchNormBuffers::fresh(spec.out_channels);
  }
  return e;
}

void append_extras(const ConvExtras& e, std::vector<Var>& out) {
  for (const Var* v : {&e.bias, &e.gamma, &e.beta}) {
    if (v->defined()) out.push_back(*v);
  }
}

}  // namespace

Var run_backbone(const NetDescription& desc, const SharingGraph& graph,
                 std::span<ConvBinding> layers, const Var& x, bool training) {
  if (layers.size() != graph.layers().size()) {
    throw ShapeError("run_backbone: " + std::to_string(layers.size()) + " weights for " +
                     std::to_string(graph.layers().size()) + " layers");
  }
  if (x.value().rank() != 4 || x.shape()[1] != desc.in_channels) {
    throw ShapeError("run_backbone: input " + to_string(x.shape()) + " for " +
                     std::to_string(desc.in_channels) + " channels");
  }
  Interpreter run(desc, graph, layers, training);
  switch (desc.family) {
    case Family::kPlain: return run.plain(x);
    case Family::kResidual: return run.residual(x);
    case Family::kDense: return run.dense(x);
    case Family::kInvertedResidual: return run.inverted(x);
    case Family::kUpsampler: return run.upsampler(x);
  }
  throw TopologyError("unsupported family");
}

HyperModel::HyperModel(const NetDescription& desc, std::uint64_t seed, std::size_t embedding)
    : desc_(desc), graph_(build_sharing_graph(desc)) {
  Rng rng(seed);
  for (const auto& info : graph_.latents()) {
    latents_.push_back(LatentVector::zeros(info.dim, info.sparsifiable, info.name));
    init_latent(latents_.back(), rng);
  }
  for (const auto& spec : graph_.layers()) {
    hyper_.emplace_back(spec.out_channels, spec.weight_in_channels(), spec.kernel_h,
                        spec.kernel_w, embedding);
    Rng child = rng.fork();
    hyper_.back().init(child);
    extras_.push_back(make_extras(spec));
  }
}

Var HyperModel::binding_vector(const LatentBinding& binding) const {
  std::vector<Var> parts;
  parts.reserve(binding.segments.size());
  for (const auto& seg : binding.segments) {
    const Var& z = latents_.at(seg.latent).values;
    parts.push_back(seg.repeat == 1 ? z : ops::repeat_interleave(z, seg.repeat));
  }
  return parts.size() == 1 ? parts[0] : ops::concat(parts, 0);
}

std::vector<Var> HyperModel::generate_weights() const {
  std::vector<Var> out;
  out.reserve(hyper_.size());
  for (std::size_t i = 0; i < hyper_.size(); ++i) {
    const LayerWiring& w = graph_.wiring()[i];
    out.push_back(hyper_[i].forward(binding_vector(w.output), binding_vector(w.input)));
  }
  return out;
}

Var HyperModel::forward(const Var& x, bool training) {
  const std::vector<Var> weights = generate_weights();
  std::vector<ConvBinding> layers;
  layers.reserve(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    layers.push_back({weights[i], &extras_[i], graph_.layers()[i].groups});
  }
  return run_backbone(desc_, graph_, layers, x, training);
}

std::vector<Var> HyperModel::parameters() const {
  std::vector<Var> out;
  for (const auto& h : hyper_) {
    for (const auto& p : h.parameters()) out.push_back(p);
  }
  for (const auto& e : extras_) append_extras(e, out);
  return out;
}

std::vector<Var> HyperModel::latent_vars() const {
  std::vector<Var> out;
  for (const auto& l : latents_) out.push_back(l.values);
  return out;
}

ExplicitNetwork::ExplicitNetwork(NetDescription desc, std::vector<Layer> layers)
    : desc_(std::move(desc)), graph_(build_sharing_graph(desc_)), layers_(std::move(layers)) {
  if (layers_.size() != graph_.layers().size()) {
    throw ShapeError("ExplicitNetwork: layer count does not match the description");
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& w = layers_[i].weight;
    if (!w.defined() || w.value().rank() != 4 || layers_[i].groups == 0 ||
        w.shape()[0] % layers_[i].groups != 0) {
      throw ShapeError("ExplicitNetwork: malformed weight for layer '" + graph_.layers()[i].id +
                       "'");
    }
  }
}

Var ExplicitNetwork::forward(const Var& x, bool training) {
  std::vector<ConvBinding> layers;
  layers.reserve(layers_.size());
  for (auto& l : layers_) layers.push_back({l.weight, &l.extras, l.groups});
  return run_backbone(desc_, graph_, layers, x, training);
}

std::vector<Var> ExplicitNetwork::parameters() const {
  std::vector<Var> out;
  for (const auto& l : layers_) out.push_back(l.weight);
  for (const auto& l : layers_) append_extras(l.extras, out);
  return out;
}

std::vector<std::size_t> ExplicitNetwork::channels() const {
  std::vector<std::size_t> out;
  for (const auto& l : layers_) out.push_back(l.weight.shape()[0]);
  return out;
}

}  // namespace dhp
