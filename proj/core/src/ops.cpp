#include "dhp/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

namespace dhp::ops {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

const Tensor& parent_value(const detail::Node& self, std::size_t i) {
  return self.parents[i]->value;
}

detail::Node& parent(detail::Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const auto n = static_cast<Eigen::Index>(a.shape()[0]);
  const auto k = static_cast<Eigen::Index>(a.shape()[1]);
  const auto c = static_cast<Eigen::Index>(b.shape()[1]);
  Tensor out(Shape{a.shape()[0], b.shape()[1]});
  MatMap(out.data().data(), n, c).noalias() =
      ConstMatMap(a.value().data().data(), n, k) * ConstMatMap(b.value().data().data(), k, c);
  return Var::from_op(std::move(out), {a, b}, [n, k, c](detail::Node& self) {
    ConstMatMap g(self.grad.data().data(), n, c);
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) {
      Tensor ga(pa.value.shape());
      MatMap(ga.data().data(), n, k).noalias() =
          g * ConstMatMap(pb.value.data().data(), k, c).transpose();
      detail::accumulate(pa, ga);
    }
    if (pb.requires_grad) {
      Tensor gb(pb.value.shape());
      MatMap(gb.data().data(), k, c).noalias() =
          ConstMatMap(pa.value.data().data(), n, k).transpose() * g;
      detail::accumulate(pb, gb);
    }
  });
}

namespace {

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_stride;  // 0 on broadcast axes
  std::vector<std::size_t> b_stride;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out.assign(rank, 1);
  p.a_stride.assign(rank, 0);
  p.b_stride.assign(rank, 0);
  std::size_t sa = 1, sb = 1;
  for (std::size_t r = 0; r < rank; ++r) {
    const std::size_t axis = rank - 1 - r;
    const std::size_t da = r < a.size() ? a[a.size() - 1 - r] : 1;
    const std::size_t db = r < b.size() ? b[b.size() - 1 - r] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("broadcast_mul: incompatible shapes " + to_string(a) + " and " +
                       to_string(b));
    }
    p.out[axis] = std::max(da, db);
    p.a_stride[axis] = da == 1 ? 0 : sa;
    p.b_stride[axis] = db == 1 ? 0 : sb;
    sa *= da;
    sb *= db;
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element in order.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t rank = p.out.size();
  const std::size_t total = numel(p.out);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < total; ++o) {
    f(o, ia, ib);
    for (std::size_t axis = rank; axis-- > 0;) {
      ++idx[axis];
      ia += p.a_stride[axis];
      ib += p.b_stride[axis];
      if (idx[axis] < p.out[axis]) break;
      ia -= p.a_stride[axis] * idx[axis];
      ib -= p.b_stride[axis] * idx[axis];
      idx[axis] = 0;
    }
  }
}

}  // namespace

Var broadcast_mul(const Var& a, const Var& b) {
  auto plan = plan_broadcast(a.shape(), b.shape());
  Tensor out(plan.out);
  {
    auto av = a.value().data();
    auto bv = b.value().data();
    auto ov = out.data();
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      ov[o] = av[ia] * bv[ib];
    });
  }
  return Var::from_op(std::move(out), {a, b}, [plan](detail::Node& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    Tensor ga = pa.requires_grad ? Tensor(pa.value.shape()) : Tensor();
    Tensor gb = pb.requires_grad ? Tensor(pb.value.shape()) : Tensor();
    auto g = self.grad.data();
    auto av = pa.value.data();
    auto bv = pb.value.data();
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (pa.requires_grad) ga[ia] += g[o] * bv[ib];
      if (pb.requires_grad) gb[ib] += g[o] * av[ia];
    });
    if (pa.requires_grad) detail::accumulate(pa, ga);
    if (pb.requires_grad) detail::accumulate(pb, gb);
  });
}

Var batched_matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() != sa.size() - 1 ||
      !std::equal(sb.begin(), sb.end() - 1, sa.begin()) || sb.back() != sa.back()) {
    throw ShapeError("batched_matmul: " + to_string(sa) + " * " + to_string(sb));
  }
  const std::size_t m = sa.back();
  const std::size_t p = sa[sa.size() - 2];
  const std::size_t batch = numel(sb) / m;
  Shape out_shape(sa.begin(), sa.end() - 1);
  Tensor out(out_shape);
  {
    auto av = a.value().data();
    auto bv = b.value().data();
    auto ov = out.data();
    for (std::size_t t = 0; t < batch; ++t) {
      const double* mat = av.data() + t * p * m;
      const double* vec = bv.data() + t * m;
      for (std::size_t i = 0; i < p; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += mat[i * m + j] * vec[j];
        ov[t * p + i] = acc;
      }
    }
  }
  return Var::from_op(std::move(out), {a, b}, [batch, p, m](detail::Node& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    auto g = self.grad.data();
    auto av = pa.value.data();
    auto bv = pb.value.data();
    if (pa.requires_grad) {
      Tensor ga(pa.value.shape());
      auto gv = ga.data();
      for (std::size_t t = 0; t < batch; ++t)
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < m; ++j)
            gv[(t * p + i) * m + j] = g[t * p + i] * bv[t * m + j];
      detail::accumulate(pa, ga);
    }
    if (pb.requires_grad) {
      Tensor gb(pb.value.shape());
      auto gv = gb.data();
      for (std::size_t t = 0; t < batch; ++t)
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < m; ++j)
            gv[t * m + j] += g[t * p + i] * av[(t * p + i) * m + j];
      detail::accumulate(pb, gb);
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
  return Var::from_op(std::move(out), {a, b}, [](detail::Node& self) {
    detail::accumulate(parent(self, 0), self.grad);
    detail::accumulate(parent(self, 1), self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  auto bv = b.value().data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
  return Var::from_op(std::move(out), {a, b}, [](detail::Node& self) {
    detail::accumulate(parent(self, 0), self.grad);
    auto& pb = parent(self, 1);
    if (pb.requires_grad) {
      Tensor g = self.grad;
      for (auto& v : g.data()) v = -v;
      detail::accumulate(pb, g);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return Var::from_op(std::move(out), {a}, [s](detail::Node& self) {
    Tensor g = self.grad;
    for (auto& v : g.data()) v *= s;
    detail::accumulate(parent(self, 0), g);
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return Var::from_op(std::move(out), {a}, [](detail::Node& self) {
    Tensor g = self.grad;
    auto x = parent_value(self, 0).data();
    auto gv = g.data();
    for (std::size_t i = 0; i < gv.size(); ++i) {
      if (!(x[i] > 0.0)) gv[i] = 0.0;
    }
    detail::accumulate(parent(self, 0), g);
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return Var::from_op(std::move(out), {a}, [](detail::Node& self) {
    auto& pa = parent(self, 0);
    detail::accumulate(pa, self.grad.reshaped(pa.value.shape()));
  });
}

Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a.value().sum());
  return Var::from_op(std::move(out), {a}, [](detail::Node& self) {
    auto& pa = parent(self, 0);
    detail::accumulate(pa, Tensor(pa.value.shape(), self.grad[0]));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.numel());
  return scale(sum(a), 1.0 / n);
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& x = logits.value();
  if (x.rank() != 2 || x.dim(0) != labels.size()) {
    throw ShapeError("softmax_cross_entropy: logits " + to_string(x.shape()) + " with " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = x.dim(0), k = x.dim(1);
  Tensor probs(x.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw std::out_of_range("softmax_cross_entropy: label out of range");
    }
    const double* row = x.data().data() + i * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - log_z);
    loss += log_z - row[labels[i]];
  }
  loss /= static_cast<double>(n);
  std::vector<int> saved(labels.begin(), labels.end());
  return Var::from_op(Tensor::scalar(loss), {logits},
                      [probs = std::move(probs), saved = std::move(saved), n,
                       k](detail::Node& self) {
                        Tensor g = probs;
                        const double s = self.grad[0] / static_cast<double>(n);
                        for (std::size_t i = 0; i < n; ++i) {
                          g[i * k + static_cast<std::size_t>(saved[i])] -= 1.0;
                          for (std::size_t j = 0; j < k; ++j) g[i * k + j] *= s;
                        }
                        detail::accumulate(parent(self, 0), g);
                      });
}

Var mse(const Var& prediction, const Var& target) {
  require_same_shape("mse", prediction, target);
  const auto p = prediction.value().data();
  const auto t = target.value().data();
  const double n = static_cast<double>(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
  return Var::from_op(Tensor::scalar(acc / n), {prediction, target}, [n](detail::Node& self) {
    auto& pp = parent(self, 0);
    auto& pt = parent(self, 1);
    Tensor g(pp.value.shape());
    auto pv = pp.value.data();
    auto tv = pt.value.data();
    const double s = 2.0 * self.grad[0] / n;
    for (std::size_t i = 0; i < pv.size(); ++i) g[i] = s * (pv[i] - tv[i]);
    detail::accumulate(pp, g);
    if (pt.requires_grad) {
      for (auto& v : g.data()) v = -v;
      detail::accumulate(pt, g);
    }
  });
}

Var add_channel_bias(const Var& x, const Var& bias) {
  const Shape& s = x.shape();
  if (s.size() < 2 || bias.value().rank() != 1 || bias.shape()[0] != s[1]) {
    throw ShapeError("add_channel_bias: " + to_string(s) + " + " + to_string(bias.shape()));
  }
  const std::size_t n = s[0], c = s[1], inner = x.numel() / (n * c);
  Tensor out = x.value();
  auto ov = out.data();
  auto bv = bias.value().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t t = 0; t < inner; ++t) ov[(i * c + j) * inner + t] += bv[j];
  return Var::from_op(std::move(out), {x, bias}, [n, c, inner](detail::Node& self) {
    detail::accumulate(parent(self, 0), self.grad);
    auto& pb = parent(self, 1);
    if (pb.requires_grad) {
      Tensor gb(Shape{c});
      auto g = self.grad.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j)
          for (std::size_t t = 0; t < inner; ++t) gb[j] += g[(i * c + j) * inner + t];
      detail::accumulate(pb, gb);
    }
  });
}

BatchNormBuffers BatchNormBuffers::fresh(std::size_t channels) {
  return {Tensor::zeros(Shape{channels}), Tensor::ones(Shape{channels})};
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormBuffers* buffers,
               const BatchNormOptions& options) {
  const Shape& s = x.shape();
  if (s.size() != 4 || gamma.shape() != Shape{s[1]} || beta.shape() != Shape{s[1]}) {
    throw ShapeError("batch_norm: input " + to_string(s) + " gamma " +
                     to_string(gamma.shape()) + " beta " + to_string(beta.shape()));
  }
  const std::size_t n = s[0], c = s[1], hw = s[2] * s[3];
  const double count = static_cast<double>(n * hw);
  auto xv = x.value().data();

  std::vector<double> mu(c), inv_std(c);
  if (options.training) {
    for (std::size_t j = 0; j < c; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < hw; ++t) m += xv[(i * c + j) * hw + t];
      m /= count;
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < hw; ++t) {
          const double d = xv[(i * c + j) * hw + t] - m;
          v += d * d;
        }
      v /= count;
      mu[j] = m;
      inv_std[j] = 1.0 / std::sqrt(v + options.eps);
      if (buffers && grad_enabled()) {
        const double unbiased = count > 1.0 ? v * count / (count - 1.0) : v;
        buffers->mean[j] = (1.0 - options.momentum) * buffers->mean[j] + options.momentum * m;
        buffers->var[j] = (1.0 - options.momentum) * buffers->var[j] + options.momentum * unbiased;
      }
    }
  } else {
    if (!buffers) throw std::invalid_argument("batch_norm: eval mode needs running statistics");
    for (std::size_t j = 0; j < c; ++j) {
      mu[j] = buffers->mean[j];
      inv_std[j] = 1.0 / std::sqrt(buffers->var[j] + options.eps);
    }
  }

  Tensor xhat(s);
  Tensor out(s);
  auto gv = gamma.value().data();
  auto bv = beta.value().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t t = 0; t < hw; ++t) {
        const std::size_t k = (i * c + j) * hw + t;
        xhat[k] = (xv[k] - mu[j]) * inv_std[j];
        out[k] = gv[j] * xhat[k] + bv[j];
      }

  const bool training = options.training;
  return Var::from_op(
      std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw, count,
       training](detail::Node& self) {
        auto g = self.grad.data();
        auto& px = parent(self, 0);
        auto& pg = parent(self, 1);
        auto& pb = parent(self, 2);
        auto gamma_v = pg.value.data();
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j)
            for (std::size_t t = 0; t < hw; ++t) {
              const std::size_t k = (i * c + j) * hw + t;
              sum_g[j] += g[k];
              sum_gx[j] += g[k] * xhat[k];
            }
        if (pg.requires_grad) detail::accumulate(pg, Tensor(Shape{c}, sum_gx));
        if (pb.requires_grad) detail::accumulate(pb, Tensor(Shape{c}, sum_g));
        if (px.requires_grad) {
          Tensor gx(px.value.shape());
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j)
              for (std::size_t t = 0; t < hw; ++t) {
                const std::size_t k = (i * c + j) * hw + t;
                if (training) {
                  gx[k] = gamma_v[j] * inv_std[j] *
                          (g[k] - sum_g[j] / count - xhat[k] * sum_gx[j] / count);
                } else {
                  gx[k] = gamma_v[j] * inv_std[j] * g[k];
                }
              }
          detail::accumulate(px, gx);
        }
      });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= first[a];
  for (std::size_t a = axis + 1; a < first.size(); ++a) inner *= first[a];
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t a = 0; a < s.size(); ++a) {
      if (a != axis && s[a] != first[a]) {
        throw ShapeError("concat: " + to_string(s) + " vs " + to_string(first));
      }
    }
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  Tensor out(out_shape);
  auto ov = out.data();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].value().data();
    const std::size_t e = extents[k];
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + o * e * inner, e * inner,
                  ov.begin() + (o * total + offset) * inner);
    }
    offset += e;
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return Var::from_op(std::move(out), std::move(parents),
                      [extents, outer, inner, total](detail::Node& self) {
                        auto g = self.grad.data();
                        std::size_t offset = 0;
                        for (std::size_t k = 0; k < extents.size(); ++k) {
                          auto& pk = parent(self, k);
                          const std::size_t e = extents[k];
                          if (pk.requires_grad) {
                            Tensor gk(pk.value.shape());
                            auto gv = gk.data();
                            for (std::size_t o = 0; o < outer; ++o) {
                              std::copy_n(g.begin() + (o * total + offset) * inner, e * inner,
                                          gv.begin() + o * e * inner);
                            }
                            detail::accumulate(pk, gk);
                          }
                          offset += e;
                        }
                      });
}

Var repeat_interleave(const Var& v, std::size_t repeats) {
  if (v.value().rank() != 1 || repeats == 0) {
    throw ShapeError("repeat_interleave: needs a 1-D input and repeats >= 1");
  }
  const std::size_t d = v.shape()[0];
  Tensor out(Shape{d * repeats});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t r = 0; r < repeats; ++r) out[i * repeats + r] = v.value()[i];
  return Var::from_op(std::move(out), {v}, [d, repeats](detail::Node& self) {
    Tensor g(Shape{d});
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t r = 0; r < repeats; ++r) g[i] += self.grad[i * repeats + r];
    detail::accumulate(parent(self, 0), g);
  });
}

Var avg_pool2d(const Var& x, std::size_t k) {
  const Shape& s = x.shape();
  if (s.size() != 4 || k == 0 || s[2] % k != 0 || s[3] % k != 0) {
    throw ShapeError("avg_pool2d: " + to_string(s) + " with k=" + std::to_string(k));
  }
  const std::size_t nc = s[0] * s[1], h = s[2], w = s[3], ho = h / k, wo = w / k;
  Tensor out(Shape{s[0], s[1], ho, wo});
  const double inv = 1.0 / static_cast<double>(k * k);
  auto xv = x.value().data();
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        double acc = 0.0;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) acc += xv[(p * h + i * k + a) * w + j * k + b];
        out[(p * ho + i) * wo + j] = acc * inv;
      }
  return Var::from_op(std::move(out), {x}, [nc, h, w, ho, wo, k, inv](detail::Node& self) {
    auto& px = parent(self, 0);
    Tensor gx(px.value.shape());
    for (std::size_t p = 0; p < nc; ++p)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          const double g = self.grad[(p * ho + i) * wo + j] * inv;
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) gx[(p * h + i * k + a) * w + j * k + b] += g;
        }
    detail::accumulate(px, gx);
  });
}

Var global_avg_pool(const Var& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("global_avg_pool: " + to_string(s));
  const std::size_t nc = s[0] * s[1], hw = s[2] * s[3];
  Tensor out(Shape{s[0], s[1], 1, 1});
  auto xv = x.value().data();
  for (std::size_t p = 0; p < nc; ++p) {
    double acc = 0.0;
    for (std::size_t t = 0; t < hw; ++t) acc += xv[p * hw + t];
    out[p] = acc / static_cast<double>(hw);
  }
  return Var::from_op(std::move(out), {x}, [nc, hw](detail::Node& self) {
    auto& px = parent(self, 0);
    Tensor gx(px.value.shape());
    for (std::size_t p = 0; p < nc; ++p) {
      const double g = self.grad[p] / static_cast<double>(hw);
      for (std::size_t t = 0; t < hw; ++t) gx[p * hw + t] = g;
    }
    detail::accumulate(px, gx);
  });
}

Var pixel_shuffle(const Var& x, std::size_t r) {
  const Shape& s = x.shape();
  if (s.size() != 4 || r == 0 || s[1] % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: " + to_string(s) + " with r=" + std::to_string(r));
  }
  const std::size_t n = s[0], c = s[1] / (r * r), h = s[2], w = s[3];
  Tensor out(Shape{n, c, h * r, w * r});
  // Maps each output element to its source element.
  std::vector<std::size_t> src(out.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j) {
          const std::size_t in_ch = ch * r * r + i * r + j;
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
              const std::size_t o = ((b * c + ch) * h * r + y * r + i) * w * r + xx * r + j;
              src[o] = ((b * s[1] + in_ch) * h + y) * w + xx;
            }
        }
  auto xv = x.value().data();
  for (std::size_t o = 0; o < src.size(); ++o) out[o] = xv[src[o]];
  return Var::from_op(std::move(out), {x}, [src = std::move(src)](detail::Node& self) {
    auto& px = parent(self, 0);
    Tensor gx(px.value.shape());
    for (std::size_t o = 0; o < src.size(); ++o) gx[src[o]] += self.grad[o];
    detail::accumulate(px, gx);
  });
}

}  // namespace dhp::ops
