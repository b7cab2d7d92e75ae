#include "dhp/proxopt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace dhp {

std::string to_string(Regularizer r) { return r == Regularizer::kL1 ? "l1" : "l2"; }

Regularizer parse_regularizer(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "l1") return Regularizer::kL1;
  if (t == "l2") return Regularizer::kL2;
  throw std::invalid_argument("unknown regularizer '" + text + "' (expected l1 or l2)");
}

void OptimConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("momentum must be in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be non-negative");
  if (!(sparsity >= 0.0)) throw std::invalid_argument("sparsity factor must be non-negative");
}

void sgd_step(Tensor& param, const Tensor& grad, const OptimConfig& config, Tensor& velocity) {
  if (grad.shape() != param.shape()) {
    throw ShapeError("sgd_step: gradient " + to_string(grad.shape()) + " for parameter " +
                     to_string(param.shape()));
  }
  grad.check_finite("gradient");
  if (config.momentum > 0.0) {
    if (velocity.empty()) velocity = Tensor::zeros(param.shape());
    if (velocity.shape() != param.shape()) throw ShapeError("sgd_step: momentum buffer shape");
  }
  auto p = param.data();
  auto g = grad.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    double d = g[i] + config.weight_decay * p[i];
    if (config.momentum > 0.0) {
      velocity[i] = config.momentum * velocity[i] + d;
      d = velocity[i];
    }
    p[i] -= config.lr * d;
  }
}

void Sgd::step(const OptimConfig& config) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    sgd_step(params_[i].mutable_value(), params_[i].node().grad, config, velocity_[i]);
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

namespace {

void check_threshold(double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("proximal threshold must be non-negative");
}

double l2_norm(const Tensor& v) {
  double s = 0.0;
  for (double x : v.data()) s += x * x;
  return std::sqrt(s);
}

}  // namespace

Tensor prox_l1(const Tensor& v, double t) {
  check_threshold(t);
  Tensor out = v;
  for (auto& x : out.data()) x = std::copysign(std::max(std::abs(x) - t, 0.0), x);
  return out;
}

Tensor prox_l2(const Tensor& v, double t) {
  check_threshold(t);
  if (t == 0.0) return v;
  const double norm = l2_norm(v);
  const double factor = norm <= t ? 0.0 : 1.0 - t / norm;
  Tensor out = v;
  for (auto& x : out.data()) x *= factor;
  return out;
}

std::vector<Tensor> prox_group_l2(std::span<const Tensor> vectors, double t) {
  check_threshold(t);
  std::vector<Tensor> out(vectors.begin(), vectors.end());
  if (vectors.empty() || t == 0.0) return out;
  const std::size_t d = vectors[0].numel();
  for (const auto& v : vectors) {
    if (v.numel() != d) throw ShapeError("prox_group_l2: vectors differ in length");
  }
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (const auto& v : vectors) s += v[j] * v[j];
    const double norm = std::sqrt(s);
    const double factor = norm <= t ? 0.0 : 1.0 - t / norm;
    for (auto& v : out) v[j] *= factor;
  }
  return out;
}

void latent_step(LatentVector& latent, const Tensor& grad, const OptimConfig& config) {
  Tensor& z = latent.values.mutable_value();
  if (grad.shape() != z.shape()) {
    throw ShapeError("latent_step: gradient " + to_string(grad.shape()) + " for latent " +
                     to_string(z.shape()));
  }
  grad.check_finite("latent gradient");
  auto zv = z.data();
  auto g = grad.data();
  for (std::size_t i = 0; i < zv.size(); ++i) zv[i] -= config.lr * g[i];
  if (!latent.sparsifiable || config.sparsity == 0.0) return;
  z = config.regularizer == Regularizer::kL1 ? prox_l1(z, config.threshold())
                                             : prox_l2(z, config.threshold());
}

void latent_group_step(std::span<LatentVector* const> latents, const OptimConfig& config) {
  std::vector<Tensor> stepped;
  stepped.reserve(latents.size());
  for (LatentVector* l : latents) {
    Tensor z = l->values.value();
    const Tensor g = l->values.grad();
    g.check_finite("latent gradient");
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] -= config.lr * g[i];
    stepped.push_back(std::move(z));
  }
  auto shrunk = prox_group_l2(stepped, config.threshold());
  for (std::size_t k = 0; k < latents.size(); ++k) {
    latents[k]->values.mutable_value() = std::move(shrunk[k]);
  }
}

}  // namespace dhp
