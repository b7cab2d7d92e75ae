#include "dhp/sharegraph.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>

namespace dhp {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

std::string to_string(Family f) {
  switch (f) {
    case Family::kPlain: return "plain";
    case Family::kResidual: return "residual";
    case Family::kDense: return "dense";
    case Family::kInvertedResidual: return "inverted_residual";
    case Family::kUpsampler: return "upsampler";
  }
  return "?";
}

Family parse_family(const std::string& text) {
  const std::string t = lower(text);
  if (t == "plain") return Family::kPlain;
  if (t == "residual") return Family::kResidual;
  if (t == "dense") return Family::kDense;
  if (t == "inverted_residual" || t == "inverted-residual") return Family::kInvertedResidual;
  if (t == "upsampler") return Family::kUpsampler;
  throw TopologyError("unsupported network family '" + text + "'");
}

std::string to_string(ConvKind k) {
  switch (k) {
    case ConvKind::kStandard: return "standard";
    case ConvKind::kPointwise: return "pointwise";
    case ConvKind::kDepthwise: return "depthwise";
    case ConvKind::kGroup: return "group";
    case ConvKind::kTransposed: return "transposed";
  }
  return "?";
}

std::string to_string(WiringKind k) {
  switch (k) {
    case WiringKind::kChain: return "chain";
    case WiringKind::kFirstLayer: return "first_layer";
    case WiringKind::kResidualShared: return "residual_shared";
    case WiringKind::kResidualShortcut: return "residual_shortcut";
    case WiringKind::kDenseConcat: return "dense_concat";
    case WiringKind::kInvertedExpand: return "inverted_expand";
    case WiringKind::kDepthwise: return "depthwise";
    case WiringKind::kUpsampleInterleave: return "upsample_interleave";
    case WiringKind::kHead: return "head";
  }
  return "?";
}

void NetDescription::validate() const {
  if (in_channels == 0 || height == 0 || width == 0) {
    throw TopologyError("input shape must be positive");
  }
  if (widths.empty()) throw TopologyError("widths must not be empty");
  if (std::any_of(widths.begin(), widths.end(), [](std::size_t w) { return w == 0; })) {
    throw TopologyError("widths must be positive");
  }
  if (kernel == 0 || kernel % 2 == 0) throw TopologyError("kernel must be odd and positive");
  if (outputs == 0) throw TopologyError("outputs must be positive");
  const bool staged = family == Family::kResidual || family == Family::kInvertedResidual ||
                      family == Family::kDense;
  if (staged && blocks == 0) throw TopologyError("blocks per stage must be positive");
  if (staged || family == Family::kPlain) {
    // Every stage (or plain layer) after the first halves the resolution.
    const std::size_t down = std::size_t{1} << (widths.size() - 1);
    if (height % down != 0 || width % down != 0) {
      throw TopologyError("input resolution not divisible by the number of downsampling stages");
    }
  }
  if (family == Family::kInvertedResidual && expansion == 0) {
    throw TopologyError("expansion must be positive");
  }
  if (family == Family::kDense && growth == 0) throw TopologyError("growth must be positive");
  if (family == Family::kUpsampler && upscale < 2) throw TopologyError("upscale must be >= 2");
}

LatentId SharingGraph::add_latent(std::string name, std::size_t dim, bool sparsifiable) {
  if (dim == 0) throw TopologyError("latent '" + name + "' has zero dimension");
  for (const auto& l : latents_) {
    if (l.name == name) throw TopologyError("duplicate latent '" + name + "'");
  }
  latents_.push_back({std::move(name), dim, sparsifiable});
  const LatentId id = latents_.size() - 1;
  groups_.push_back({id});
  group_of_.push_back(groups_.size() - 1);
  return id;
}

std::size_t SharingGraph::add_layer(LayerSpec spec, LayerWiring wiring) {
  for (const auto& l : layers_) {
    if (l.id == spec.id) throw TopologyError("duplicate layer '" + spec.id + "'");
  }
  for (const auto* b : {&wiring.input, &wiring.output}) {
    if (b->segments.empty()) throw TopologyError("layer '" + spec.id + "' has an empty binding");
    for (const auto& s : b->segments) {
      if (s.latent >= latents_.size() || s.repeat == 0) {
        throw TopologyError("layer '" + spec.id + "' references an unknown latent");
      }
    }
  }
  layers_.push_back(std::move(spec));
  wiring_.push_back(std::move(wiring));
  return layers_.size() - 1;
}

void SharingGraph::tie(LatentId a, LatentId b) {
  const std::size_t ga = group_of_.at(a), gb = group_of_.at(b);
  if (ga == gb) return;
  if (latents_[a].dim != latents_[b].dim) {
    throw TopologyError("cannot tie latents of different dimension: '" + latents_[a].name +
                        "' and '" + latents_[b].name + "'");
  }
  const std::size_t keep = std::min(ga, gb), drop = std::max(ga, gb);
  for (LatentId id : groups_[drop]) groups_[keep].push_back(id);
  std::sort(groups_[keep].begin(), groups_[keep].end());
  groups_.erase(groups_.begin() + static_cast<std::ptrdiff_t>(drop));
  for (std::size_t g = 0; g < groups_.size(); ++g)
    for (LatentId id : groups_[g]) group_of_[id] = g;
}

std::size_t SharingGraph::binding_dim(const LatentBinding& b) const {
  std::size_t d = 0;
  for (const auto& s : b.segments) d += latents_.at(s.latent).dim * s.repeat;
  return d;
}

std::size_t SharingGraph::layer_index(std::string_view id) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].id == id) return i;
  }
  throw std::out_of_range("no layer '" + std::string(id) + "'");
}

LatentId SharingGraph::latent_index(std::string_view name) const {
  for (std::size_t i = 0; i < latents_.size(); ++i) {
    if (latents_[i].name == name) return i;
  }
  throw std::out_of_range("no latent '" + std::string(name) + "'");
}

void SharingGraph::validate() const {
  if (layers_.empty()) throw TopologyError("graph has no layers");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const LayerWiring& w = wiring_[i];
    if (l.groups == 0 || l.in_channels % l.groups != 0 || l.out_channels % l.groups != 0) {
      throw TopologyError("layer '" + l.id + "': channels not divisible by groups");
    }
    if (l.kind == ConvKind::kDepthwise && l.groups != l.in_channels) {
      throw TopologyError("layer '" + l.id + "': depthwise conv needs groups == in_channels");
    }
    if (binding_dim(w.input) != l.weight_in_channels()) {
      throw TopologyError("layer '" + l.id + "': input latent dimension " +
                          std::to_string(binding_dim(w.input)) + " != " +
                          std::to_string(l.weight_in_channels()));
    }
    if (binding_dim(w.output) != l.out_channels) {
      throw TopologyError("layer '" + l.id + "': output latent dimension " +
                          std::to_string(binding_dim(w.output)) + " != " +
                          std::to_string(l.out_channels));
    }
    if (l.tags.first_layer) {
      for (const auto& s : w.input.segments) {
        if (latents_[s.latent].sparsifiable) {
          throw TopologyError("layer '" + l.id + "': image-channel latent must not be sparsified");
        }
      }
    }
    if (l.kind == ConvKind::kDepthwise || l.kind == ConvKind::kGroup) {
      for (const auto& s : w.input.segments) {
        if (latents_[s.latent].sparsifiable) {
          throw TopologyError("layer '" + l.id + "': per-group latent must not be sparsified");
        }
      }
    }
    if (l.tags.output_layer) {
      for (const auto& s : w.output.segments) {
        if (latents_[s.latent].sparsifiable) {
          throw TopologyError("layer '" + l.id + "': network output latent must not be sparsified");
        }
      }
    }
  }
  for (const auto& g : groups_) {
    for (LatentId id : g) {
      if (latents_[id].dim != latents_[g.front()].dim ||
          latents_[id].sparsifiable != latents_[g.front()].sparsifiable) {
        throw TopologyError("mask group mixes incompatible latents");
      }
    }
  }
}

LayerWiring wire_dense_block(const LatentBinding& stage_input,
                             const std::vector<LatentId>& previous_growth, LatentId growth) {
  LayerWiring w;
  w.input = stage_input;
  for (LatentId id : previous_growth) w.input.segments.push_back({id, 1});
  w.output = LatentBinding::of(growth);
  w.kind = WiringKind::kDenseConcat;
  return w;
}

InvertedResidualWiring wire_inverted_residual(const LatentBinding& block_input,
                                              LatentId expanded, LatentId per_group,
                                              const LatentBinding& block_output) {
  InvertedResidualWiring w;
  w.expand = {block_input, LatentBinding::of(expanded), OutputTransform::kIdentity,
              WiringKind::kInvertedExpand};
  w.depthwise = {LatentBinding::of(per_group), LatentBinding::of(expanded),
                 OutputTransform::kIdentity, WiringKind::kDepthwise};
  w.project = {LatentBinding::of(expanded), block_output, OutputTransform::kIdentity,
               WiringKind::kResidualShared};
  return w;
}

LayerWiring wire_upsampler(const SharingGraph& graph, const LayerSpec& layer,
                           const LatentBinding& input, std::size_t r) {
  const std::size_t c = graph.binding_dim(input);
  if (r == 0 || layer.out_channels != r * r * c) {
    throw TopologyError("upsampler '" + layer.id + "': out_channels " +
                        std::to_string(layer.out_channels) + " != r^2 * " + std::to_string(c));
  }
  LayerWiring w;
  w.input = input;
  for (const auto& s : input.segments) w.output.segments.push_back({s.latent, s.repeat * r * r});
  w.transform = OutputTransform::kRepeatInterleave;
  w.kind = WiringKind::kUpsampleInterleave;
  return w;
}

namespace {

class GraphBuilder {
 public:
  explicit GraphBuilder(const NetDescription& d) : d_(d) {}

  SharingGraph take() { return std::move(g_); }
  SharingGraph& graph() { return g_; }

  struct Conv {
    std::string id;
    ConvKind kind = ConvKind::kStandard;
    std::size_t in_ch, out_ch, k = 1, stride = 1, groups = 1;
    std::size_t in_h, in_w;
    bool bias = false, bn = false;
    RoleTags tags;
  };

  // Adds a conv with "same" padding; returns the layer index.
  std::size_t conv(const Conv& c, LayerWiring wiring) {
    LayerSpec s;
    s.id = c.id;
    s.kind = c.kind;
    s.in_channels = c.in_ch;
    s.out_channels = c.out_ch;
    s.kernel_h = s.kernel_w = c.k;
    s.stride = c.stride;
    s.padding = c.k / 2;
    s.groups = c.groups;
    s.bias = c.bias;
    s.batch_norm = c.bn;
    s.in_h = c.in_h;
    s.in_w = c.in_w;
    s.out_h = (c.in_h + 2 * s.padding - c.k) / c.stride + 1;
    s.out_w = (c.in_w + 2 * s.padding - c.k) / c.stride + 1;
    s.tags = c.tags;
    return g_.add_layer(std::move(s), std::move(wiring));
  }

  LatentId latent(const std::string& name, std::size_t dim, bool sparsifiable = true) {
    return g_.add_latent(name, dim, sparsifiable);
  }

 private:
  const NetDescription& d_;
  SharingGraph g_;
};

RoleTags tags(int stage = -1, int block = -1) {
  RoleTags t;
  t.stage = stage;
  t.block = block;
  return t;
}

LayerWiring chain(LatentBinding in, LatentBinding out, WiringKind kind = WiringKind::kChain) {
  return {std::move(in), std::move(out), OutputTransform::kIdentity, kind};
}

void add_head(GraphBuilder& b, const NetDescription& d, const LatentBinding& in,
              std::size_t in_ch) {
  const LatentId out = b.latent("head.out", d.outputs, false);
  RoleTags t;
  t.output_layer = true;
  b.conv({"head", ConvKind::kPointwise, in_ch, d.outputs, 1, 1, 1, 1, 1, true, false, t},
         chain(in, LatentBinding::of(out), WiringKind::kHead));
}

SharingGraph build_plain(const NetDescription& d) {
  GraphBuilder b(d);
  LatentId prev = b.latent("input", d.in_channels, false);
  std::size_t ch = d.in_channels;
  std::size_t h = d.height, w = d.width;
  for (std::size_t i = 0; i < d.widths.size(); ++i) {
    const std::string id = "conv" + std::to_string(i);
    const LatentId out = b.latent(id + ".out", d.widths[i]);
    RoleTags t;
    t.first_layer = i == 0;
    const std::size_t stride = i == 0 ? 1 : 2;
    b.conv({id, ConvKind::kStandard, ch, d.widths[i], d.kernel, stride, 1, h, w, false, true, t},
           chain(LatentBinding::of(prev), LatentBinding::of(out),
                 i == 0 ? WiringKind::kFirstLayer : WiringKind::kChain));
    prev = out;
    ch = d.widths[i];
    h /= stride;
    w /= stride;
  }
  add_head(b, d, LatentBinding::of(prev), ch);
  return b.take();
}

SharingGraph build_residual(const NetDescription& d) {
  GraphBuilder b(d);
  const bool share = d.share_latents;
  const LatentId input = b.latent("input", d.in_channels, false);
  std::size_t h = d.height, w = d.width;

  // Shared mode: one latent per stage. Non-shared mode: one latent per
  // producer of the stage activation, tied into the stage's mask group.
  LatentId stage_latent = b.latent(share ? "stage0.shared" : "stem.out", d.widths[0]);
  {
    RoleTags t = tags(0);
    t.first_layer = true;
    b.conv({"stem", ConvKind::kStandard, d.in_channels, d.widths[0], d.kernel, 1, 1, h, w, false,
            true, t},
           chain(LatentBinding::of(input), LatentBinding::of(stage_latent),
                 WiringKind::kFirstLayer));
  }
  LatentId current = stage_latent;  // latent controlling the running activation
  std::size_t ch = d.widths[0];
  for (std::size_t s = 0; s < d.widths.size(); ++s) {
    const std::size_t width = d.widths[s];
    const std::string stage = "s" + std::to_string(s);
    LatentId shared = current;
    if (share && s > 0) shared = b.latent(stage + ".shared", width);
    LatentId group_anchor = share ? shared : current;
    for (std::size_t blk = 0; blk < d.blocks; ++blk) {
      const std::string pre = stage + ".b" + std::to_string(blk);
      const bool down = s > 0 && blk == 0;
      const std::size_t stride = down ? 2 : 1;
      const std::size_t oh = h / stride, ow = w / stride;
      const LatentId mid = b.latent(pre + ".mid", width);
      const auto t = tags(static_cast<int>(s), static_cast<int>(blk));
      b.conv({pre + ".conv1", ConvKind::kStandard, ch, width, d.kernel, stride, 1, h, w, false,
              true, t},
             chain(LatentBinding::of(current), LatentBinding::of(mid)));
      LatentId out = shared;
      if (!share) out = b.latent(pre + ".conv2.out", width);
      b.conv({pre + ".conv2", ConvKind::kStandard, width, width, d.kernel, 1, 1, oh, ow, false,
              true, t},
             chain(LatentBinding::of(mid), LatentBinding::of(out), WiringKind::kResidualShared));
      if (down) {
        LatentId sc = shared;
        if (!share) sc = b.latent(pre + ".shortcut.out", width);
        b.conv({pre + ".shortcut", ConvKind::kPointwise, ch, width, 1, 2, 1, h, w, false, true, t},
               chain(LatentBinding::of(current), LatentBinding::of(sc),
                     WiringKind::kResidualShortcut));
        if (!share) {
          group_anchor = sc;
          b.graph().tie(sc, out);
        }
      } else if (!share) {
        b.graph().tie(group_anchor, out);
      }
      current = out;
      ch = width;
      h = oh;
      w = ow;
    }
  }
  add_head(b, d, LatentBinding::of(current), ch);
  return b.take();
}

SharingGraph build_dense(const NetDescription& d) {
  GraphBuilder b(d);
  const LatentId input = b.latent("input", d.in_channels, false);
  std::size_t h = d.height, w = d.width;
  LatentId stage_in = b.latent("stem.out", d.widths[0]);
  {
    RoleTags t = tags(0);
    t.first_layer = true;
    b.conv({"stem", ConvKind::kStandard, d.in_channels, d.widths[0], d.kernel, 1, 1, h, w, false,
            true, t},
           chain(LatentBinding::of(input), LatentBinding::of(stage_in), WiringKind::kFirstLayer));
  }
  std::size_t stage_ch = d.widths[0];
  LatentBinding concat;
  for (std::size_t s = 0; s < d.widths.size(); ++s) {
    const std::string stage = "d" + std::to_string(s);
    if (s > 0) {
      const LatentId trans = b.latent("t" + std::to_string(s) + ".out", d.widths[s]);
      b.conv({"t" + std::to_string(s), ConvKind::kPointwise, stage_ch, d.widths[s], 1, 1, 1, h, w,
              false, true, tags(static_cast<int>(s))},
             chain(concat, LatentBinding::of(trans)));
      stage_in = trans;
      stage_ch = d.widths[s];
      h /= 2;
      w /= 2;
    }
    std::vector<LatentId> growth;
    for (std::size_t blk = 0; blk < d.blocks; ++blk) {
      const std::string pre = stage + ".b" + std::to_string(blk);
      const LatentId g = b.latent(pre + ".growth", d.growth);
      b.conv({pre + ".conv", ConvKind::kStandard, stage_ch, d.growth, d.kernel, 1, 1, h, w, false,
              true, tags(static_cast<int>(s), static_cast<int>(blk))},
             wire_dense_block(LatentBinding::of(stage_in), growth, g));
      growth.push_back(g);
      stage_ch += d.growth;
    }
    concat = LatentBinding::of(stage_in);
    for (LatentId g : growth) concat.segments.push_back({g, 1});
  }
  add_head(b, d, concat, stage_ch);
  return b.take();
}

SharingGraph build_inverted(const NetDescription& d) {
  GraphBuilder b(d);
  const bool share = d.share_latents;
  const LatentId input = b.latent("input", d.in_channels, false);
  std::size_t h = d.height, w = d.width;
  LatentId current = b.latent(share ? "stage0.shared" : "stem.out", d.widths[0]);
  {
    RoleTags t = tags(0);
    t.first_layer = true;
    b.conv({"stem", ConvKind::kStandard, d.in_channels, d.widths[0], d.kernel, 1, 1, h, w, false,
            true, t},
           chain(LatentBinding::of(input), LatentBinding::of(current), WiringKind::kFirstLayer));
  }
  std::size_t ch = d.widths[0];
  for (std::size_t s = 0; s < d.widths.size(); ++s) {
    const std::size_t width = d.widths[s];
    const std::string stage = "s" + std::to_string(s);
    LatentId shared = current;
    if (share && s > 0) shared = b.latent(stage + ".shared", width);
    LatentId group_anchor = current;
    for (std::size_t blk = 0; blk < d.blocks; ++blk) {
      const std::string pre = stage + ".b" + std::to_string(blk);
      const bool down = s > 0 && blk == 0;
      const std::size_t stride = down ? 2 : 1;
      const std::size_t hidden = ch * d.expansion;
      const LatentId expanded = b.latent(pre + ".expanded", hidden);
      const LatentId per_group = b.latent(pre + ".dw.group", 1, false);
      LatentId out = shared;
      if (!share) out = b.latent(pre + ".project.out", width);
      const auto wiring = wire_inverted_residual(LatentBinding::of(current), expanded, per_group,
                                                 LatentBinding::of(out));
      const auto t = tags(static_cast<int>(s), static_cast<int>(blk));
      b.conv({pre + ".expand", ConvKind::kPointwise, ch, hidden, 1, 1, 1, h, w, false, true, t},
             wiring.expand);
      b.conv({pre + ".dw", ConvKind::kDepthwise, hidden, hidden, d.kernel, stride, hidden, h, w,
              false, true, t},
             wiring.depthwise);
      h /= stride;
      w /= stride;
      b.conv({pre + ".project", ConvKind::kPointwise, hidden, width, 1, 1, 1, h, w, false, true,
              t},
             wiring.project);
      if (!share) {
        if (down) {
          group_anchor = out;
        } else {
          b.graph().tie(group_anchor, out);
        }
      }
      current = out;
      ch = width;
    }
  }
  add_head(b, d, LatentBinding::of(current), ch);
  return b.take();
}

SharingGraph build_upsampler(const NetDescription& d) {
  GraphBuilder b(d);
  const LatentId input = b.latent("input", d.in_channels, false);
  LatentId prev = input;
  std::size_t ch = d.in_channels;
  for (std::size_t i = 0; i < d.widths.size(); ++i) {
    const std::string id = "conv" + std::to_string(i);
    const LatentId out = b.latent(id + ".out", d.widths[i]);
    RoleTags t;
    t.first_layer = i == 0;
    b.conv({id, ConvKind::kStandard, ch, d.widths[i], d.kernel, 1, 1, d.height, d.width, true,
            false, t},
           chain(LatentBinding::of(prev), LatentBinding::of(out),
                 i == 0 ? WiringKind::kFirstLayer : WiringKind::kChain));
    prev = out;
    ch = d.widths[i];
  }
  const std::size_t r = d.upscale;
  {
    RoleTags t;
    t.upsampler = true;
    LayerSpec probe;
    probe.id = "up";
    probe.out_channels = r * r * ch;
    const auto wiring = wire_upsampler(b.graph(), probe, LatentBinding::of(prev), r);
    b.conv({"up", ConvKind::kStandard, ch, r * r * ch, d.kernel, 1, 1, d.height, d.width, true,
            false, t},
           wiring);
  }
  const LatentId out = b.latent("head.out", d.outputs, false);
  RoleTags t;
  t.output_layer = true;
  b.conv({"head", ConvKind::kStandard, ch, d.outputs, d.kernel, 1, 1, d.height * r, d.width * r,
          true, false, t},
         chain(LatentBinding::of(prev), LatentBinding::of(out), WiringKind::kHead));
  return b.take();
}

}  // namespace

SharingGraph build_sharing_graph(const NetDescription& desc) {
  desc.validate();
  SharingGraph g;
  switch (desc.family) {
    case Family::kPlain: g = build_plain(desc); break;
    case Family::kResidual: g = build_residual(desc); break;
    case Family::kDense: g = build_dense(desc); break;
    case Family::kInvertedResidual: g = build_inverted(desc); break;
    case Family::kUpsampler: g = build_upsampler(desc); break;
  }
  g.validate();
  return g;
}

}  // namespace dhp
