#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dhp {

/// Network description could not be turned into a valid sharing graph.
class TopologyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Family { kPlain, kResidual, kDense, kInvertedResidual, kUpsampler };

std::string to_string(Family f);
/// Accepts plain | residual | dense | inverted_residual | upsampler.
Family parse_family(const std::string& text);

/// Declarative description of a desk-scale backbone.
///
/// How `widths` is read depends on the family:
///   plain              one entry per conv layer
///   residual           one entry per stage (stem width == widths[0])
///   inverted_residual  one entry per stage (stem width == widths[0])
///   dense              widths[0] is the stem, widths[s] the transition into stage s
///   upsampler          one entry per conv layer before the upsampler
struct NetDescription {
  Family family = Family::kPlain;
  std::size_t in_channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::vector<std::size_t> widths{8, 8};
  std::size_t blocks = 2;     // blocks per stage
  std::size_t kernel = 3;
  std::size_t expansion = 4;  // inverted residual
  std::size_t growth = 4;     // dense
  std::size_t upscale = 2;    // upsampler factor r
  std::size_t outputs = 10;   // classes, or output channels for regression
  bool share_latents = true;  // false: separate latents tied into mask groups

  bool is_regression() const { return family == Family::kUpsampler; }
  /// Throws TopologyError on inconsistent channel arithmetic.
  void validate() const;
  friend bool operator==(const NetDescription&, const NetDescription&) = default;
};

enum class ConvKind { kStandard, kPointwise, kDepthwise, kGroup, kTransposed };

std::string to_string(ConvKind k);

struct RoleTags {
  bool first_layer = false;
  bool upsampler = false;
  bool output_layer = false;
  int stage = -1;
  int block = -1;
  friend bool operator==(const RoleTags&, const RoleTags&) = default;
};

struct LayerSpec {
  std::string id;
  ConvKind kind = ConvKind::kStandard;
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  bool bias = false;
  bool batch_norm = false;
  std::size_t in_h = 1, in_w = 1;
  std::size_t out_h = 1, out_w = 1;
  RoleTags tags;

  /// Input channels seen by one group, i.e. the weight's second extent.
  std::size_t weight_in_channels() const { return in_channels / groups; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

using LatentId = std::size_t;

struct LatentInfo {
  std::string name;
  std::size_t dim = 0;
  bool sparsifiable = true;
  friend bool operator==(const LatentInfo&, const LatentInfo&) = default;
};

/// One piece of a binding: latent `latent`, each element repeated `repeat`
/// times consecutively.
struct LatentSegment {
  LatentId latent = 0;
  std::size_t repeat = 1;
  friend bool operator==(const LatentSegment&, const LatentSegment&) = default;
};

/// Ordered references to latents whose (repeat-interleaved) concatenation
/// controls a channel axis. Concatenations reference latents rather than
/// copying them, so a mask on a latent reaches every binding that names it.
struct LatentBinding {
  std::vector<LatentSegment> segments;

  static LatentBinding of(LatentId id) { return {{LatentSegment{id, 1}}}; }
  friend bool operator==(const LatentBinding&, const LatentBinding&) = default;
};

enum class OutputTransform { kIdentity, kRepeatInterleave };

/// Which sharing rule produced a layer's wiring.
enum class WiringKind {
  kChain,              // output latent feeds the next layer's input
  kFirstLayer,         // input bound to the frozen image-channel latent
  kResidualShared,     // output bound to a stage-shared latent
  kResidualShortcut,   // downsampling projection bound to the stage latent
  kDenseConcat,        // input is a concatenation of earlier latents
  kInvertedExpand,     // expansion latent passed to three layers
  kDepthwise,          // per-group latent of dimension 1
  kUpsampleInterleave, // output latent is the input repeat-interleaved r^2 times
  kHead,               // classifier / output layer
};

std::string to_string(WiringKind k);

struct LayerWiring {
  LatentBinding input;
  LatentBinding output;
  OutputTransform transform = OutputTransform::kIdentity;
  WiringKind kind = WiringKind::kChain;
  friend bool operator==(const LayerWiring&, const LayerWiring&) = default;
};

/// Latent ownership and sharing structure of one backbone.
///
/// Every conv layer binds exactly one input and one output latent binding.
/// Latents in one mask group always receive the same mask; in the default
/// sharing mode every group is a singleton.
class SharingGraph {
 public:
  LatentId add_latent(std::string name, std::size_t dim, bool sparsifiable);
  std::size_t add_layer(LayerSpec spec, LayerWiring wiring);
  /// Merge the mask groups of `a` and `b`.
  void tie(LatentId a, LatentId b);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::vector<LayerWiring>& wiring() const { return wiring_; }
  const std::vector<LatentInfo>& latents() const { return latents_; }
  const std::vector<std::vector<LatentId>>& mask_groups() const { return groups_; }
  std::size_t group_of(LatentId id) const { return group_of_.at(id); }

  std::size_t binding_dim(const LatentBinding& b) const;
  std::size_t layer_index(std::string_view id) const;
  LatentId latent_index(std::string_view name) const;

  /// Checks every structural invariant; throws TopologyError.
  void validate() const;

  friend bool operator==(const SharingGraph&, const SharingGraph&) = default;

 private:
  std::vector<LayerSpec> layers_;
  std::vector<LayerWiring> wiring_;
  std::vector<LatentInfo> latents_;
  std::vector<std::vector<LatentId>> groups_;
  std::vector<std::size_t> group_of_;
};

/// Builds the sharing graph for a supported family. Deterministic: the same
/// description always yields the same layer order and latent ids.
SharingGraph build_sharing_graph(const NetDescription& desc);

/// Input binding of a dense block: the stage input followed by the growth
/// latents of every earlier block in the stage, in order.
LayerWiring wire_dense_block(const LatentBinding& stage_input,
                             const std::vector<LatentId>& previous_growth, LatentId growth);

struct InvertedResidualWiring {
  LayerWiring expand;
  LayerWiring depthwise;
  LayerWiring project;
};

/// The expansion latent is the output of the first pointwise conv, the
/// channel controller of the depthwise conv, and the input of the second
/// pointwise conv.
InvertedResidualWiring wire_inverted_residual(const LatentBinding& block_input,
                                              LatentId expanded, LatentId per_group,
                                              const LatentBinding& block_output);

/// Output binding is the input binding with every element repeated r*r
/// times. Throws TopologyError unless out_channels == r*r * input dim.
LayerWiring wire_upsampler(const SharingGraph& graph, const LayerSpec& layer,
                           const LatentBinding& input, std::size_t r);

}  // namespace dhp
