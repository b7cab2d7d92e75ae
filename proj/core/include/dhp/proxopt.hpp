#pragma once

#include <span>
#include <string>
#include <vector>

#include "dhp/autodiff.hpp"
#include "dhp/hypernet.hpp"

namespace dhp {

enum class Regularizer { kL1, kL2 };

std::string to_string(Regularizer r);
/// Accepts "l1" / "l2" (case-insensitive).
Regularizer parse_regularizer(const std::string& text);

/// Hyperparameters of one optimizer iteration.
///
/// `lr` is the SGD step and also the proximal step size; the proximal
/// threshold is `sparsity * lr`. Weight decay applies to hypernetwork and
/// backbone parameters only, never to latents.
struct OptimConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double sparsity = 0.0;
  Regularizer regularizer = Regularizer::kL1;

  /// Throws std::invalid_argument on lr <= 0, momentum outside [0,1),
  /// negative weight decay or negative sparsity.
  void validate() const;
  double threshold() const { return sparsity * lr; }
};

/// In-place SGD on one tensor: v = momentum * v + (g + wd * p); p -= lr * v.
/// `velocity` is allocated on first use.
void sgd_step(Tensor& param, const Tensor& grad, const OptimConfig& config, Tensor& velocity);

/// Momentum buffers for a fixed, ordered list of parameters.
class Sgd {
 public:
  explicit Sgd(std::vector<Var> params) : params_(std::move(params)), velocity_(params_.size()) {}

  /// Applies sgd_step to every parameter using its accumulated gradient.
  /// Throws NonFiniteError if a gradient contains NaN/Inf.
  void step(const OptimConfig& config);
  void zero_grad();
  const std::vector<Var>& params() const { return params_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> velocity_;
};

/// Soft-thresholding: sgn(v) * max(|v| - t, 0). Throws on t < 0.
Tensor prox_l1(const Tensor& v, double t);

/// Block shrinkage: (1 - t / max(||v||, t)) * v. Throws on t < 0.
Tensor prox_l2(const Tensor& v, double t);

/// Group shrinkage across equally sized vectors: for every index j the
/// vector (v_0[j], v_1[j], ...) is block-shrunk by prox_l2. This is the
/// proximal map of the l2,1 norm over channel groups.
std::vector<Tensor> prox_group_l2(std::span<const Tensor> vectors, double t);

/// One proximal-gradient iteration on a latent:
/// z <- prox(z - lr * grad, sparsity * lr). Non-sparsifiable latents get the
/// plain gradient step. No momentum, no weight decay.
void latent_step(LatentVector& latent, const Tensor& grad, const OptimConfig& config);

/// Plain gradient step on a group of latents followed by prox_group_l2.
/// Used when correlated layers own separate latents.
void latent_group_step(std::span<LatentVector* const> latents, const OptimConfig& config);

}  // namespace dhp
