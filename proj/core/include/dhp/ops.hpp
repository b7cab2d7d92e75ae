#pragma once

#include <span>
#include <vector>

#include "dhp/autodiff.hpp"

// Differentiable operations on Var. Only broadcast_mul broadcasts; every
// other binary op requires exactly matching shapes.
namespace dhp::ops {

/// [n,k] x [k,c] -> [n,c]
Var matmul(const Var& a, const Var& b);

/// Element-wise product with trailing-axis broadcasting: shapes are aligned
/// from the right and an axis of extent 1 (or a missing leading axis)
/// stretches to the other operand's extent.
Var broadcast_mul(const Var& a, const Var& b);

/// a: batch + [p, m], b: batch + [m] -> batch + [p]; one matrix-vector
/// product per batch index.
Var batched_matmul(const Var& a, const Var& b);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Cross-correlation. input [N,C,H,W], weight [n, C/groups, kh, kw].
Var conv2d(const Var& input, const Var& weight, const Conv2dOptions& options = {});

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Subgradient at 0 is 0.
Var relu(const Var& a);
Var reshape(const Var& a, Shape shape);
/// Sum of all elements, shape [1].
Var sum(const Var& a);
/// Mean of all elements, shape [1].
Var mean(const Var& a);

/// Mean cross-entropy of row-wise softmax(logits [N,K]) against labels.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);
/// Mean squared error over all elements.
Var mse(const Var& prediction, const Var& target);

/// x [N,C,...] + bias [C] broadcast over the batch and spatial axes.
Var add_channel_bias(const Var& x, const Var& bias);

/// Running statistics of a batch-norm layer; not trained by gradient.
struct BatchNormBuffers {
  Tensor mean;
  Tensor var;
  static BatchNormBuffers fresh(std::size_t channels);
};

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization of x [N,C,H,W]. In training mode batch
/// statistics are used and `buffers` (if given) receive an exponential
/// moving average update; in eval mode `buffers` supply the statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormBuffers* buffers,
               const BatchNormOptions& options);

/// Concatenate along `axis`; all other extents must agree.
Var concat(std::span<const Var> parts, std::size_t axis);
/// 1-D: [a,b] with r=2 -> [a,a,b,b].
Var repeat_interleave(const Var& v, std::size_t repeats);

/// Non-overlapping k x k average pooling of [N,C,H,W]; H and W divisible by k.
Var avg_pool2d(const Var& x, std::size_t k);
/// [N,C,H,W] -> [N,C,1,1]
Var global_avg_pool(const Var& x);
/// [N, C*r*r, H, W] -> [N, C, H*r, W*r]; input channel c*r*r + i*r + j lands
/// at output channel c, row offset i, column offset j.
Var pixel_shuffle(const Var& x, std::size_t r);

}  // namespace dhp::ops
