#include "dhp/hypernet.hpp"

#include <cmath>
#include <numeric>

#include "dhp/ops.hpp"

namespace dhp {

LatentVector LatentVector::zeros(std::size_t dim, bool sparsifiable, std::string owner) {
  if (dim == 0) throw ShapeError("latent vector dimension must be >= 1");
  return {Var(Tensor::zeros(Shape{dim}), true), sparsifiable, std::move(owner)};
}

void init_latent(LatentVector& latent, Rng& rng) {
  for (auto& v : latent.values.mutable_value().data()) v = rng.normal();
}

namespace hyper {

Var latent_matrix(const Var& z_out, const Var& z_in, const Var& b0) {
  if (z_out.value().rank() != 1 || z_in.value().rank() != 1 ||
      b0.shape() != Shape{z_out.shape()[0], z_in.shape()[0]}) {
    throw ShapeError("latent_matrix: z_out " + to_string(z_out.shape()) + " z_in " +
                     to_string(z_in.shape()) + " B0 " + to_string(b0.shape()));
  }
  const std::size_t n = z_out.shape()[0], c = z_in.shape()[0];
  Var outer = ops::matmul(ops::reshape(z_out, {n, 1}), ops::reshape(z_in, {1, c}));
  return ops::add(outer, b0);
}

Var embed(const Var& latent, const Var& w1, const Var& b1) {
  const Shape& s = latent.shape();
  if (s.size() != 2 || w1.value().rank() != 3 || w1.shape()[0] != s[0] ||
      w1.shape()[1] != s[1] || b1.shape() != w1.shape()) {
    throw ShapeError("embed: Z " + to_string(s) + " W1 " + to_string(w1.shape()) + " B1 " +
                     to_string(b1.shape()));
  }
  Var lifted = ops::reshape(latent, {s[0], s[1], 1});
  return ops::add(ops::broadcast_mul(lifted, w1), b1);
}

Var explicit_output(const Var& embedding, const Var& w2, const Var& b2) {
  const Shape& e = embedding.shape();
  const Shape& w = w2.shape();
  if (e.size() != 3 || w.size() != 4 || w[0] != e[0] || w[1] != e[1] || w[3] != e[2] ||
      b2.shape() != Shape{e[0], e[1], w[2]}) {
    throw ShapeError("explicit_output: E " + to_string(e) + " W2 " + to_string(w) + " B2 " +
                     to_string(b2.shape()));
  }
  return ops::add(ops::batched_matmul(w2, embedding), b2);
}

}  // namespace hyper

HyperLayer::HyperLayer(std::size_t out_channels, std::size_t in_channels, std::size_t kernel_h,
                       std::size_t kernel_w, std::size_t embedding)
    : out_(out_channels), in_(in_channels), kh_(kernel_h), kw_(kernel_w), m_(embedding) {
  if (!out_ || !in_ || !kh_ || !kw_ || !m_) {
    throw ShapeError("HyperLayer dimensions must be positive");
  }
  const std::size_t wh = kh_ * kw_;
  b0_ = Var(Tensor::zeros({out_, in_}), true);
  w1_ = Var(Tensor::zeros({out_, in_, m_}), true);
  b1_ = Var(Tensor::zeros({out_, in_, m_}), true);
  w2_ = Var(Tensor::zeros({out_, in_, wh, m_}), true);
  b2_ = Var(Tensor::zeros({out_, in_, wh}), true);
}

Var HyperLayer::forward(const Var& z_out, const Var& z_in) const {
  if (z_out.shape() != Shape{out_} || z_in.shape() != Shape{in_}) {
    throw ShapeError("HyperLayer::forward: expected latents [" + std::to_string(out_) + "], [" +
                     std::to_string(in_) + "], got " + to_string(z_out.shape()) + ", " +
                     to_string(z_in.shape()));
  }
  Var z = hyper::latent_matrix(z_out, z_in, b0_);
  Var e = hyper::embed(z, w1_, b1_);
  Var o = hyper::explicit_output(e, w2_, b2_);
  return ops::reshape(o, {out_, in_, kh_, kw_});
}

double xavier_w1_bound(std::size_t embedding) {
  return std::sqrt(6.0 / (1.0 + static_cast<double>(embedding)));
}

double hyperfan_in_w2_variance(std::size_t in_channels, std::size_t kernel_h,
                               std::size_t kernel_w, std::size_t embedding) {
  // Var(Z) = 1 for a product of independent standard normals, so
  // Var(E) = Var(W1) = bound^2 / 3. O sums m terms W2 * E.
  const double bound = xavier_w1_bound(embedding);
  const double var_e = bound * bound / 3.0;
  const double fan_in = static_cast<double>(in_channels * kernel_h * kernel_w);
  return 2.0 / (fan_in * static_cast<double>(embedding) * var_e);
}

void HyperLayer::init(Rng& rng) {
  b0_.mutable_value().fill(0.0);
  b1_.mutable_value().fill(0.0);
  b2_.mutable_value().fill(0.0);
  const double a = xavier_w1_bound(m_);
  for (auto& v : w1_.mutable_value().data()) v = rng.uniform(-a, a);
  const double b = std::sqrt(3.0 * hyperfan_in_w2_variance(in_, kh_, kw_, m_));
  for (auto& v : w2_.mutable_value().data()) v = rng.uniform(-b, b);
}

HyperLayer HyperLayer::sliced(std::span<const std::size_t> keep_out,
                              std::span<const std::size_t> keep_in) const {
  HyperLayer out(keep_out.size(), keep_in.size(), kh_, kw_, m_);
  out.b0_.mutable_value() = select_rows_cols(b0_.value(), keep_out, keep_in);
  out.w1_.mutable_value() = select_rows_cols(w1_.value(), keep_out, keep_in);
  out.b1_.mutable_value() = select_rows_cols(b1_.value(), keep_out, keep_in);
  out.w2_.mutable_value() = select_rows_cols(w2_.value(), keep_out, keep_in);
  out.b2_.mutable_value() = select_rows_cols(b2_.value(), keep_out, keep_in);
  return out;
}

std::size_t HyperLayer::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.numel();
  return total;
}

}  // namespace dhp
