#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

#include "dhp/autodiff.hpp"
#include "dhp/rng.hpp"

namespace dhp {

/// Trainable per-layer vector whose elements map one-to-one onto the output
/// channels it controls.
struct LatentVector {
  Var values;  // shape [d], requires_grad
  bool sparsifiable = true;
  std::string owner;

  static LatentVector zeros(std::size_t dim, bool sparsifiable, std::string owner);
  std::size_t dim() const { return values.shape()[0]; }
};

/// Draws z ~ N(0, 1).
void init_latent(LatentVector& latent, Rng& rng);

namespace hyper {

/// Z = z_out * z_in^T + B0.  z_out [n], z_in [c], B0 [n,c] -> [n,c]
Var latent_matrix(const Var& z_out, const Var& z_in, const Var& b0);

/// E = U3(Z) o W1 + B1, where U3 appends a unit axis.  Z [n,c] -> [n,c,m]
Var embed(const Var& latent, const Var& w1, const Var& b1);

/// O = W2 * E + B2 as a batched matrix-vector product.
/// E [n,c,m], W2 [n,c,wh,m], B2 [n,c,wh] -> [n,c,wh]
Var explicit_output(const Var& embedding, const Var& w2, const Var& b2);

}  // namespace hyper

/// Hypernetwork generating the [n, c, kh, kw] weight of one backbone layer
/// from the latents controlling its output (n) and input (c) channels.
///
/// Parameters are owned per layer: two layers bound to the same latent still
/// get distinct HyperLayers.
class HyperLayer {
 public:
  static constexpr std::size_t kDefaultEmbedding = 8;

  HyperLayer(std::size_t out_channels, std::size_t in_channels, std::size_t kernel_h,
             std::size_t kernel_w, std::size_t embedding = kDefaultEmbedding);

  std::size_t out_channels() const { return out_; }
  std::size_t in_channels() const { return in_; }
  std::size_t kernel_h() const { return kh_; }
  std::size_t kernel_w() const { return kw_; }
  std::size_t embedding() const { return m_; }

  /// Full generator: latent layer, embedding layer, explicit layer, then a
  /// row-major reshape [n,c,wh] -> [n,c,kh,kw].
  Var forward(const Var& z_out, const Var& z_in) const;

  /// Biases to zero, W1 Xavier-uniform, W2 at the hyperfan-in variance.
  void init(Rng& rng);
  void init(std::uint64_t seed) {
    Rng rng(seed);
    init(rng);
  }

  /// Physically smaller layer keeping the listed output/input indices of every
  /// parameter tensor.
  HyperLayer sliced(std::span<const std::size_t> keep_out,
                    std::span<const std::size_t> keep_in) const;

  /// B0, W1, B1, W2, B2 in that order.
  std::array<Var, 5> parameters() const { return {b0_, w1_, b1_, w2_, b2_}; }
  const Var& b0() const { return b0_; }
  const Var& w1() const { return w1_; }
  const Var& b1() const { return b1_; }
  const Var& w2() const { return w2_; }
  const Var& b2() const { return b2_; }
  Var& b0() { return b0_; }
  Var& w1() { return w1_; }
  Var& b1() { return b1_; }
  Var& w2() { return w2_; }
  Var& b2() { return b2_; }

  std::size_t parameter_count() const;

 private:
  std::size_t out_, in_, kh_, kw_, m_;
  Var b0_, w1_, b1_, w2_, b2_;
};

/// Xavier-uniform bound for W1, treating each (i,j) embedding vector as a
/// 1 -> m projection.
double xavier_w1_bound(std::size_t embedding);

/// Variance of W2 such that generated weights have variance
/// 2 / (in_channels * kh * kw) when z ~ N(0,1) and W1 is Xavier-uniform.
double hyperfan_in_w2_variance(std::size_t in_channels, std::size_t kernel_h,
                               std::size_t kernel_w, std::size_t embedding);

}  // namespace dhp
