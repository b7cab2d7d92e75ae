#include "dhp_tools/verify.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dhp/backbones.hpp"
#include "dhp/hypernet.hpp"
#include "dhp/ops.hpp"
#include "dhp/proxopt.hpp"
#include "dhp/pruner.hpp"
#include "dhp/sharegraph.hpp"

namespace dhp::tools {

namespace {

class Checker {
 public:
  explicit Checker(std::string name) { report_.name = std::move(name); }

  void expect(bool ok, const std::string& what) {
    ++report_.checks;
    if (!ok) report_.failures.push_back(what);
  }

  // Records an exception thrown by a check body as a failure.
  void guard(const std::string& what, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      expect(false, what + ": threw " + e.what());
    }
  }

  SuiteReport finish(std::chrono::steady_clock::time_point start) {
    report_.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return std::move(report_);
  }

 private:
  SuiteReport report_;
};

std::string num(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------- prox ----

// Minimizes 0.5 (x - v)^2 + t |x| by successively refined grid search.
double brute_prox_l1(double v, double t) {
  auto f = [&](double x) { return 0.5 * (x - v) * (x - v) + t * std::abs(x); };
  double lo = -std::abs(v) - 1.0, hi = std::abs(v) + 1.0;
  constexpr int kPoints = 200;
  double best = 0.0;
  for (int level = 0; level < 12; ++level) {
    const double step = (hi - lo) / kPoints;
    double best_val = INFINITY;
    for (int i = 0; i <= kPoints; ++i) {
      const double x = lo + step * i;
      if (const double fx = f(x); fx < best_val) {
        best_val = fx;
        best = x;
      }
    }
    if (f(0.0) <= best_val) best = 0.0;
    lo = best - 2.0 * step;
    hi = best + 2.0 * step;
  }
  return best;
}

// Minimizes 0.5 ||x - v||^2 + t ||x|| over x = s v / ||v||, s >= 0, by grid
// search on the scalar s (the minimizer is collinear with v).
double brute_prox_l2_scale(double norm, double t) {
  auto f = [&](double s) { return 0.5 * (s - norm) * (s - norm) + t * s; };
  double lo = 0.0, hi = norm + 1.0, best = 0.0;
  constexpr int kPoints = 200;
  for (int level = 0; level < 12; ++level) {
    const double step = (hi - lo) / kPoints;
    double best_val = INFINITY;
    for (int i = 0; i <= kPoints; ++i) {
      const double s = lo + step * i;
      if (const double fs = f(s); fs < best_val) {
        best_val = fs;
        best = s;
      }
    }
    lo = std::max(0.0, best - 2.0 * step);
    hi = best + 2.0 * step;
  }
  return best;
}

}  // namespace

SuiteReport verify_prox(std::size_t cases) {
  const auto start = std::chrono::steady_clock::now();
  Checker c("prox");
  Rng rng(20240611);
  for (std::size_t k = 0; k < cases; ++k) {
    const std::size_t d = 1 + rng.index(8);
    const double t = rng.uniform(0.0, 2.0);
    Tensor v = rng.normal_tensor({d}, 1.5);
    const std::string tag = "case " + std::to_string(k);

    const Tensor p1 = prox_l1(v, t);
    double err1 = 0.0;
    for (std::size_t i = 0; i < d; ++i) err1 = std::max(err1, std::abs(p1[i] - brute_prox_l1(v[i], t)));
    c.expect(err1 <= 1e-6, tag + ": prox_l1 differs from grid minimizer by " + num(err1));

    const Tensor p2 = prox_l2(v, t);
    double norm = 0.0;
    for (double x : v.data()) norm += x * x;
    norm = std::sqrt(norm);
    const double closed = norm <= t ? 0.0 : 1.0 - t / norm;
    const double grid = brute_prox_l2_scale(norm, t) / norm;
    double err2 = 0.0, err2g = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      err2 = std::max(err2, std::abs(p2[i] - closed * v[i]));
      err2g = std::max(err2g, std::abs(p2[i] - grid * v[i]));
    }
    c.expect(err2 <= 1e-12, tag + ": prox_l2 differs from block shrinkage by " + num(err2));
    c.expect(err2g <= 1e-6, tag + ": prox_l2 differs from grid minimizer by " + num(err2g));

    // Scaled into the dead zone: must vanish exactly.
    Tensor small = v;
    const double shrink = rng.uniform(0.0, 1.0) * t / (norm + 1e-300);
    for (auto& x : small.data()) x *= shrink;
    const Tensor z = prox_l2(small, t);
    c.expect(z.max_abs() == 0.0, tag + ": prox_l2 did not zero a vector with norm <= t");
  }
  // Identity at zero threshold.
  const Tensor v = Rng(3).normal_tensor({7});
  c.expect(prox_l1(v, 0.0) == v && prox_l2(v, 0.0) == v, "zero threshold must be the identity");
  return c.finish(start);
}

// ------------------------------------------------------------ gradcheck ----

namespace {

using Fn = std::function<Var(const std::vector<Var>&)>;

double norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

// Worst relative error between the reverse-mode gradient of
// sum(f(inputs) * R) and central differences.
double gradcheck(const Fn& f, const std::vector<Tensor>& inputs, Rng& rng, double h = 1e-5) {
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.emplace_back(t, true);
  const Var out = f(vars);
  const Tensor r = rng.normal_tensor(out.shape());
  const Var loss = ops::sum(ops::broadcast_mul(out, Var(r)));
  loss.backward();

  auto objective = [&](const std::vector<Tensor>& values) {
    NoGradGuard guard;
    std::vector<Var> constants;
    for (const auto& t : values) constants.emplace_back(t, false);
    const Tensor o = f(constants).value();
    double s = 0.0;
    for (std::size_t i = 0; i < o.numel(); ++i) s += o[i] * r[i];
    return s;
  };

  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = vars[k].grad();
    Tensor numeric = Tensor::zeros(inputs[k].shape());
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      const double x0 = probe[k][i];
      probe[k][i] = x0 + h;
      const double up = objective(probe);
      probe[k][i] = x0 - h;
      const double down = objective(probe);
      probe[k][i] = x0;
      numeric[i] = (up - down) / (2.0 * h);
    }
    std::vector<double> diff(analytic.numel());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
    const double scale = std::max(norm(analytic.data()), norm(numeric.data()));
    if (scale < 1e-9) continue;
    worst = std::max(worst, norm(diff) / scale);
  }
  return worst;
}

Tensor away_from_zero(Tensor t, double margin = 0.05) {
  for (auto& x : t.data()) x = x >= 0 ? x + margin : x - margin;
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

}  // namespace

SuiteReport verify_gradcheck(std::size_t seeds) {
  const auto start = std::chrono::steady_clock::now();
  Checker c("gradcheck");
  constexpr double kTol = 1e-4;
  for (std::size_t seed = 1; seed <= seeds; ++seed) {
    Rng rng(1000 + seed);
    auto check = [&](const std::string& op, const Fn& f, const std::vector<Tensor>& in) {
      c.guard(op + " seed " + std::to_string(seed), [&] {
        const double err = gradcheck(f, in, rng);
        c.expect(err < kTol, op + " seed " + std::to_string(seed) + ": relative error " + num(err));
      });
    };
    const std::size_t a = pick(rng, 1, 4), b = pick(rng, 1, 4), d = pick(rng, 1, 4);

    check("matmul", [](const auto& v) { return ops::matmul(v[0], v[1]); },
          {rng.normal_tensor({a, b}), rng.normal_tensor({b, d})});
    check("broadcast_mul", [](const auto& v) { return ops::broadcast_mul(v[0], v[1]); },
          {rng.normal_tensor({a, b, 1}), rng.normal_tensor({a, b, d})});
    check("broadcast_mul_leading", [](const auto& v) { return ops::broadcast_mul(v[0], v[1]); },
          {rng.normal_tensor({b}), rng.normal_tensor({a, b})});
    check("batched_matmul", [](const auto& v) { return ops::batched_matmul(v[0], v[1]); },
          {rng.normal_tensor({a, b, d, 3}), rng.normal_tensor({a, b, 3})});
    check("add", [](const auto& v) { return ops::add(v[0], v[1]); },
          {rng.normal_tensor({a, d}), rng.normal_tensor({a, d})});
    check("sub", [](const auto& v) { return ops::sub(v[0], v[1]); },
          {rng.normal_tensor({a, d}), rng.normal_tensor({a, d})});
    check("scale", [](const auto& v) { return ops::scale(v[0], -1.7); }, {rng.normal_tensor({a, d})});
    check("relu", [](const auto& v) { return ops::relu(v[0]); },
          {away_from_zero(rng.normal_tensor({a, b, d}))});
    check("reshape", [&](const auto& v) { return ops::reshape(v[0], {a * b, d}); },
          {rng.normal_tensor({a, b, d})});
    check("sum", [](const auto& v) { return ops::sum(v[0]); }, {rng.normal_tensor({a, d})});
    check("mean", [](const auto& v) { return ops::mean(v[0]); }, {rng.normal_tensor({a, d})});
    {
      const std::size_t n = pick(rng, 1, 5), k = pick(rng, 2, 5);
      std::vector<int> labels(n);
      for (auto& l : labels) l = static_cast<int>(rng.index(k));
      check("softmax_cross_entropy",
            [labels](const auto& v) { return ops::softmax_cross_entropy(v[0], labels); },
            {rng.normal_tensor({n, k}, 2.0)});
    }
    check("mse", [](const auto& v) { return ops::mse(v[0], v[1]); },
          {rng.normal_tensor({a, d}), rng.normal_tensor({a, d})});
    {
      const std::size_t n = pick(rng, 1, 3), ch = pick(rng, 1, 4), hw = pick(rng, 1, 4);
      check("add_channel_bias", [](const auto& v) { return ops::add_channel_bias(v[0], v[1]); },
            {rng.normal_tensor({n, ch, hw, hw}), rng.normal_tensor({ch})});
      check("batch_norm_train",
            [](const auto& v) {
              return ops::batch_norm(v[0], v[1], v[2], nullptr, ops::BatchNormOptions{});
            },
            {rng.normal_tensor({n + 1, ch, hw + 1, hw}), rng.normal_tensor({ch}),
             rng.normal_tensor({ch})});
      ops::BatchNormBuffers buffers{rng.normal_tensor({ch}), rng.uniform_tensor({ch}, 0.5, 2.0)};
      check("batch_norm_eval",
            [buffers](const auto& v) mutable {
              ops::BatchNormOptions opt;
              opt.training = false;
              return ops::batch_norm(v[0], v[1], v[2], &buffers, opt);
            },
            {rng.normal_tensor({n, ch, hw, hw}), rng.normal_tensor({ch}), rng.normal_tensor({ch})});
      check("concat_axis1",
            [](const auto& v) {
              std::vector<Var> parts{v[0], v[1]};
              return ops::concat(parts, 1);
            },
            {rng.normal_tensor({n, ch, hw, hw}), rng.normal_tensor({n, 2, hw, hw})});
      check("global_avg_pool", [](const auto& v) { return ops::global_avg_pool(v[0]); },
            {rng.normal_tensor({n, ch, hw, hw + 1})});
      check("avg_pool2d", [](const auto& v) { return ops::avg_pool2d(v[0], 2); },
            {rng.normal_tensor({n, ch, 2 * hw, 2 * hw})});
      const std::size_t r = pick(rng, 1, 3);
      check("pixel_shuffle", [r](const auto& v) { return ops::pixel_shuffle(v[0], r); },
            {rng.normal_tensor({n, ch * r * r, hw, hw + 1})});
    }
    check("concat_axis0",
          [](const auto& v) {
            std::vector<Var> parts{v[0], v[1], v[2]};
            return ops::concat(parts, 0);
          },
          {rng.normal_tensor({a}), rng.normal_tensor({b}), rng.normal_tensor({d})});
    check("repeat_interleave", [d](const auto& v) { return ops::repeat_interleave(v[0], d); },
          {rng.normal_tensor({a})});
    {
      const std::size_t n = pick(rng, 1, 2);
      const std::size_t groups = pick(rng, 1, 2);
      const std::size_t cin = groups * pick(rng, 1, 2), cout = groups * pick(rng, 1, 3);
      const std::size_t k = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = rng.index(2);
      const std::size_t hh = pick(rng, k, 6), ww = pick(rng, k, 6);
      ops::Conv2dOptions opt{stride, pad, groups};
      check("conv2d", [opt](const auto& v) { return ops::conv2d(v[0], v[1], opt); },
            {rng.normal_tensor({n, cin, hh, ww}), rng.normal_tensor({cout, cin / groups, k, k})});
      const std::size_t ch = pick(rng, 1, 4);
      ops::Conv2dOptions dw{1, 1, ch};
      check("conv2d_depthwise", [dw](const auto& v) { return ops::conv2d(v[0], v[1], dw); },
            {rng.normal_tensor({n, ch, 4, 4}), rng.normal_tensor({ch, 1, 3, 3})});
    }
    {
      const std::size_t n = pick(rng, 1, 3), ch = pick(rng, 1, 3), m = pick(rng, 1, 4);
      const std::size_t kh = pick(rng, 1, 3), kw = pick(rng, 1, 3);
      check("hypernetwork",
            [&](const auto& v) {
              Var z = hyper::latent_matrix(v[0], v[1], v[2]);
              Var e = hyper::embed(z, v[3], v[4]);
              return ops::reshape(hyper::explicit_output(e, v[5], v[6]), {n, ch, kh, kw});
            },
            {rng.normal_tensor({n}), rng.normal_tensor({ch}), rng.normal_tensor({n, ch}),
             rng.normal_tensor({n, ch, m}), rng.normal_tensor({n, ch, m}),
             rng.normal_tensor({n, ch, kh * kw, m}), rng.normal_tensor({n, ch, kh * kw})});
    }

    // End-to-end: d(loss)/d(latents) through generated weights, batch norm,
    // residual additions and the classifier.
    c.guard("latent gradient seed " + std::to_string(seed), [&] {
      NetDescription desc;
      desc.family = seed % 2 ? Family::kResidual : Family::kPlain;
      desc.in_channels = 2;
      desc.height = desc.width = 4;
      desc.widths = {3, 4};
      desc.blocks = 1;
      desc.outputs = 3;
      HyperModel model(desc, seed);
      std::vector<int> labels{0, 1, 2, 1};
      // Central differences are only an oracle where the loss is smooth. A
      // batch whose perturbation crosses a ReLU kink (one-sided slopes
      // disagree) is redrawn.
      double worst = 0.0;
      bool smooth = false;
      for (int attempt = 0; attempt < 5 && !smooth; ++attempt) {
        const Tensor x = rng.normal_tensor({4, 2, 4, 4});
        auto eval = [&] {
          return ops::softmax_cross_entropy(model.forward(Var(x), true), labels);
        };
        for (auto& l : model.latents()) l.values.zero_grad();
        const double f0 = [&] {
          const Var loss = eval();
          loss.backward();
          return loss.value()[0];
        }();
        smooth = true;
        worst = 0.0;
        constexpr double h = 1e-5;
        for (auto& l : model.latents()) {
          const Tensor analytic = l.values.grad();
          Tensor numeric = Tensor::zeros(analytic.shape());
          for (std::size_t i = 0; i < numeric.numel(); ++i) {
            NoGradGuard guard;
            double& z = l.values.mutable_value()[i];
            const double z0 = z;
            z = z0 + h;
            const double up = eval().value()[0];
            z = z0 - h;
            const double down = eval().value()[0];
            z = z0;
            numeric[i] = (up - down) / (2 * h);
            const double fwd = (up - f0) / h, bwd = (f0 - down) / h;
            if (std::abs(fwd - bwd) > 1e-3 * std::max(1.0, std::abs(numeric[i]))) smooth = false;
          }
          std::vector<double> diff(numeric.numel());
          for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
          const double scale = std::max(norm(analytic.data()), norm(numeric.data()));
          if (scale > 1e-9) worst = std::max(worst, norm(diff) / scale);
        }
      }
      c.expect(smooth, "latent gradient seed " + std::to_string(seed) +
                           ": no kink-free batch found in 5 draws");
      c.expect(worst < kTol, "latent gradient seed " + std::to_string(seed) + ": relative error " +
                                 num(worst));
    });
  }
  return c.finish(start);
}

// ---------------------------------------------------------- equivalence ----

SuiteReport verify_equivalence(std::size_t shapes) {
  const auto start = std::chrono::steady_clock::now();
  Checker c("equivalence");
  Rng rng(777);
  for (std::size_t k = 0; k < shapes; ++k) {
    const std::size_t n = pick(rng, 1, 8), ch = pick(rng, 1, 8);
    const std::size_t kh = pick(rng, 1, 3), kw = pick(rng, 1, 3), m = pick(rng, 1, 8);
    const std::string tag = "shape " + std::to_string(k) + " (n=" + std::to_string(n) +
                            " c=" + std::to_string(ch) + " kh=" + std::to_string(kh) +
                            " kw=" + std::to_string(kw) + " m=" + std::to_string(m) + ")";
    c.guard(tag, [&] {
      HyperLayer layer(n, ch, kh, kw, m);
      layer.init(rng);  // biases zero
      const Tensor z_out = rng.normal_tensor({n}), z_in = rng.normal_tensor({ch});
      std::vector<double> m_out(n), m_in(ch);
      for (auto& b : m_out) b = rng.uniform() < 0.5 ? 0.0 : 1.0;
      for (auto& b : m_in) b = rng.uniform() < 0.5 ? 0.0 : 1.0;
      Tensor zm_out = z_out, zm_in = z_in;
      for (std::size_t i = 0; i < n; ++i) zm_out[i] *= m_out[i];
      for (std::size_t j = 0; j < ch; ++j) zm_in[j] *= m_in[j];

      NoGradGuard guard;
      const Tensor full = layer.forward(Var(z_out), Var(z_in)).value();
      const Tensor masked = layer.forward(Var(zm_out), Var(zm_in)).value();
      const std::size_t wh = kh * kw;
      double err = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < ch; ++j) {
          for (std::size_t q = 0; q < wh; ++q) {
            const std::size_t at = (i * ch + j) * wh + q;
            err = std::max(err, std::abs(masked[at] - m_out[i] * m_in[j] * full[at]));
          }
        }
      }
      c.expect(err <= 1e-12, tag + ": masked-latent output differs from mask-scaled output by " +
                                 num(err));

      // Structural: arbitrary biases, physically sliced generator.
      for (const Var& p : layer.parameters()) {
        for (auto& v : p.node().value.data()) v = rng.normal();
      }
      std::vector<std::size_t> keep_out, keep_in;
      for (std::size_t i = 0; i < n; ++i) {
        if (m_out[i] != 0.0) keep_out.push_back(i);
      }
      for (std::size_t j = 0; j < ch; ++j) {
        if (m_in[j] != 0.0) keep_in.push_back(j);
      }
      if (keep_out.empty()) keep_out.push_back(0);
      if (keep_in.empty()) keep_in.push_back(ch - 1);
      const Tensor reference = layer.forward(Var(z_out), Var(z_in)).value();
      const HyperLayer small = layer.sliced(keep_out, keep_in);
      const Tensor sliced = small
                                .forward(Var(select_axis0(z_out, keep_out)),
                                         Var(select_axis0(z_in, keep_in)))
                                .value();
      // Hand-rolled slicing of the reference.
      bool exact = sliced.shape() == Shape{keep_out.size(), keep_in.size(), kh, kw};
      for (std::size_t a = 0; exact && a < keep_out.size(); ++a) {
        for (std::size_t b = 0; exact && b < keep_in.size(); ++b) {
          for (std::size_t q = 0; q < wh; ++q) {
            if (sliced[(a * keep_in.size() + b) * wh + q] !=
                reference[(keep_out[a] * ch + keep_in[b]) * wh + q]) {
              exact = false;
            }
          }
        }
      }
      c.expect(exact, tag + ": sliced generator differs from the surviving slice of O");
    });
  }

  // Materialization of whole backbones equals the surviving slices exactly.
  for (Family f : {Family::kPlain, Family::kResidual, Family::kDense, Family::kInvertedResidual,
                   Family::kUpsampler}) {
    c.guard("materialize " + to_string(f), [&] {
      NetDescription desc;
      desc.family = f;
      desc.widths = {4, 6};
      desc.blocks = 2;
      desc.height = desc.width = 8;
      desc.expansion = 2;
      desc.growth = 3;
      if (f == Family::kUpsampler) {
        desc.in_channels = 1;
        desc.outputs = 1;
      }
      HyperModel model(desc, 11);
      for (auto& h : model.hyperlayers()) {
        for (const Var& p : h.parameters()) {
          for (auto& v : p.node().value.data()) v += 0.1 * rng.normal();
        }
      }
      for (auto& l : model.latents()) {
        for (auto& v : l.values.mutable_value().data()) {
          if (l.sparsifiable && rng.uniform() < 0.4) v = 1e-4;
        }
      }
      const auto masks = derive_masks(model.graph(), model.latents(), 5e-3);
      const ExplicitNetwork net = materialize(model, masks);
      NoGradGuard guard;
      const auto weights = model.generate_weights();
      bool exact = true;
      for (std::size_t i = 0; i < weights.size(); ++i) {
        const auto& w = model.graph().wiring()[i];
        const auto ob = binding_mask(masks, w.output), ib = binding_mask(masks, w.input);
        std::vector<std::size_t> ko, ki;
        for (std::size_t j = 0; j < ob.size(); ++j) {
          if (ob[j]) ko.push_back(j);
        }
        for (std::size_t j = 0; j < ib.size(); ++j) {
          if (ib[j]) ki.push_back(j);
        }
        const Tensor& full = weights[i].value();
        const Tensor& got = net.layers()[i].weight.value();
        const std::size_t cin = full.dim(1), wh = full.dim(2) * full.dim(3);
        if (got.shape() != Shape{ko.size(), ki.size(), full.dim(2), full.dim(3)}) {
          exact = false;
          continue;
        }
        for (std::size_t a = 0; a < ko.size(); ++a) {
          for (std::size_t b = 0; b < ki.size(); ++b) {
            for (std::size_t q = 0; q < wh; ++q) {
              if (got[(a * ki.size() + b) * wh + q] != full[(ko[a] * cin + ki[b]) * wh + q]) {
                exact = false;
              }
            }
          }
        }
      }
      c.expect(exact, "materialize " + to_string(f) + ": weights are not the surviving slices");
    });
  }
  return c.finish(start);
}

// -------------------------------------------------------------- sharing ----

SuiteReport verify_sharing() {
  const auto start = std::chrono::steady_clock::now();
  Checker c("sharing");

  c.guard("plain chain", [&] {
    NetDescription d;
    d.family = Family::kPlain;
    d.widths = {8, 8};
    d.outputs = 10;
    const SharingGraph g = build_sharing_graph(d);
    c.expect(g.latents().size() == 4, "plain 3->8->8->10 must own 4 latents");
    c.expect(g.latents()[0].dim == 3 && !g.latents()[0].sparsifiable,
             "plain input latent must have dim 3 and be frozen");
  });

  c.guard("residual stage sharing", [&] {
    NetDescription d;
    d.family = Family::kResidual;
    d.widths = {16, 16};
    d.blocks = 2;
    const SharingGraph g = build_sharing_graph(d);
    for (std::size_t s = 0; s < 2; ++s) {
      const std::string st = "s" + std::to_string(s);
      const auto a = g.wiring()[g.layer_index(st + ".b0.conv2")].output;
      const auto b = g.wiring()[g.layer_index(st + ".b1.conv2")].output;
      c.expect(a == b && g.binding_dim(a) == 16,
               st + ": both second convs must share one latent of dim 16");
    }
    const auto sc = g.wiring()[g.layer_index("s1.b0.shortcut")].output;
    c.expect(sc == g.wiring()[g.layer_index("s1.b0.conv2")].output,
             "downsampling shortcut must be bound to the stage latent");
  });

  c.guard("inverted residual", [&] {
    NetDescription d;
    d.family = Family::kInvertedResidual;
    d.widths = {4, 8};
    d.expansion = 6;
    d.blocks = 1;
    HyperModel model(d, 5);
    const SharingGraph& g = model.graph();
    const LatentId e = g.latent_index("s0.b0.expanded");
    c.expect(g.latents()[e].dim == 24, "expansion 6 on 4 channels must give a 24-dim latent");
    const auto& w = g.wiring();
    const bool bound = w[g.layer_index("s0.b0.expand")].output == LatentBinding::of(e) &&
                       w[g.layer_index("s0.b0.dw")].output == LatentBinding::of(e) &&
                       w[g.layer_index("s0.b0.project")].input == LatentBinding::of(e);
    c.expect(bound, "expansion latent must control expand output, depthwise, project input");
    const auto& dw_in = w[g.layer_index("s0.b0.dw")].input.segments;
    c.expect(dw_in.size() == 1 && g.latents()[dw_in[0].latent].dim == 1 &&
                 !g.latents()[dw_in[0].latent].sparsifiable,
             "depthwise per-group latent must have dim 1 and be frozen");
    auto& z = model.latents()[e].values.mutable_value();
    for (std::size_t i : {1u, 4u, 9u, 16u, 23u}) z[i] = 0.0;
    const auto masks = derive_masks(g, model.latents(), 5e-3);
    const ExplicitNetwork net = materialize(model, masks);
    c.expect(net.layers()[g.layer_index("s0.b0.dw")].groups == 19,
             "pruning 5 of 24 expansion elements must leave 19 depthwise groups");
  });

  c.guard("dense concatenation", [&] {
    NetDescription d;
    d.family = Family::kDense;
    d.widths = {6, 5};
    d.blocks = 3;
    d.growth = 4;
    const SharingGraph g = build_sharing_graph(d);
    const auto& w = g.wiring();
    c.expect(g.binding_dim(w[g.layer_index("d0.b0.conv")].input) == 6,
             "first dense block input must be the stage input only");
    c.expect(g.binding_dim(w[g.layer_index("d0.b2.conv")].input) == 6 + 2 * 4,
             "third dense block input must be stage_in + 2k");
    auto masks = full_masks(g);
    const LatentId g0 = g.latent_index("d0.b0.growth");
    masks[g0].bits[2] = 0;
    const std::size_t removed = 6 + 2;
    for (const char* later : {"d0.b1.conv", "d0.b2.conv", "t1"}) {
      const auto bits = binding_mask(masks, w[g.layer_index(later)].input);
      std::size_t zeros = 0;
      for (auto b : bits) zeros += b == 0;
      c.expect(bits[removed] == 0 && zeros == 1,
               std::string("pruning a block-1 growth element must remove input channel ") +
                   std::to_string(removed) + " of " + later);
    }
  });

  c.guard("upsampler interleave", [&] {
    SharingGraph g;
    const LatentId in = g.add_latent("in", 2, true);
    LayerSpec up;
    up.id = "up";
    up.in_channels = 2;
    up.out_channels = 8;
    const auto w = wire_upsampler(g, up, LatentBinding::of(in), 2);
    std::vector<PruningMask> masks{{in, {1, 0}}};
    const auto bits = binding_mask(masks, w.output);
    c.expect(bits == std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0, 0, 0},
             "c=2 r=2 mask [1,0] must become [1,1,1,1,0,0,0,0]");
    masks[0].bits = {1, 1};
    const auto all = binding_mask(masks, w.output);
    c.expect(all == std::vector<std::uint8_t>(8, 1), "unpruned interleave must be the identity");

    // Pruned-then-shuffled equals shuffled-then-selected.
    Rng rng(9);
    const std::size_t cc = 3, r = 2;
    const Tensor x = rng.normal_tensor({1, cc * r * r, 3, 3});
    const std::vector<std::size_t> keep{0, 2};
    std::vector<std::size_t> keep_in;
    for (std::size_t k : keep) {
      for (std::size_t q = 0; q < r * r; ++q) keep_in.push_back(k * r * r + q);
    }
    NoGradGuard guard;
    const Tensor a = ops::pixel_shuffle(Var(select_axis1(x, keep_in)), r).value();
    const Tensor b = select_axis1(ops::pixel_shuffle(Var(x), r).value(), keep);
    c.expect(a == b, "pixel shuffle must commute with interleaved channel selection");
  });

  c.guard("wiring coverage", [&] {
    std::set<WiringKind> seen;
    for (Family f : {Family::kPlain, Family::kResidual, Family::kDense,
                     Family::kInvertedResidual, Family::kUpsampler}) {
      NetDescription d;
      d.family = f;
      if (f == Family::kUpsampler) {
        d.in_channels = 1;
        d.outputs = 1;
      }
      const SharingGraph g = build_sharing_graph(d);
      for (const auto& w : g.wiring()) seen.insert(w.kind);
      for (std::size_t i = 0; i < g.layers().size(); ++i) {
        if (!g.layers()[i].tags.first_layer) continue;
        for (const auto& s : g.wiring()[i].input.segments) {
          c.expect(!g.latents()[s.latent].sparsifiable,
                   to_string(f) + ": first-layer input latent must be frozen");
        }
      }
    }
    c.expect(seen.size() == 9, "every sharing rule must be exercised; saw " +
                                   std::to_string(seen.size()) + " of 9 wiring kinds");
  });

  // Stage consistency after pruning random latents.
  for (Family f : {Family::kResidual, Family::kInvertedResidual}) {
    for (bool share : {true, false}) {
      c.guard(to_string(f) + (share ? " shared" : " tied") + " masks", [&] {
        NetDescription d;
        d.family = f;
        d.widths = {8, 12};
        d.blocks = 3;
        d.expansion = 2;
        d.share_latents = share;
        HyperModel model(d, 21);
        Rng rng(4);
        for (auto& l : model.latents()) {
          for (auto& v : l.values.mutable_value().data()) {
            if (l.sparsifiable && rng.uniform() < 0.5) v = 0.0;
          }
        }
        const auto masks = derive_masks(model.graph(), model.latents(), 5e-3);
        const SharingGraph& g = model.graph();
        const std::string out_layer = f == Family::kResidual ? ".conv2" : ".project";
        for (std::size_t s = 0; s < 2; ++s) {
          const auto ref = surviving_channels(
              g, masks, g.layer_index("s" + std::to_string(s) + ".b0" + out_layer));
          for (std::size_t b = 1; b < 3; ++b) {
            const auto got = surviving_channels(
                g, masks,
                g.layer_index("s" + std::to_string(s) + ".b" + std::to_string(b) + out_layer));
            c.expect(got == ref, to_string(f) + " stage " + std::to_string(s) +
                                     ": blocks keep different channel sets");
          }
        }
        const ExplicitNetwork net = materialize(model, masks);
        ExplicitNetwork copy = net;
        NoGradGuard guard;
        const Tensor y = copy.forward(Var(rng.normal_tensor({2, 3, 16, 16})), false).value();
        c.expect(y.all_finite() && y.shape() == Shape{2, 10},
                 to_string(f) + ": pruned network must run");
      });
    }
  }
  return c.finish(start);
}

// ----------------------------------------------------------- accounting ----

SuiteReport verify_accounting() {
  const auto start = std::chrono::steady_clock::now();
  Checker c("accounting");

  struct Fixed {
    std::string name;
    LayerSpec spec;
    std::size_t params, flops;
  };
  auto make = [](std::string id, ConvKind kind, std::size_t out, std::size_t in, std::size_t k,
                 std::size_t groups, std::size_t ho, bool bn) {
    LayerSpec s;
    s.id = std::move(id);
    s.kind = kind;
    s.out_channels = out;
    s.in_channels = in;
    s.kernel_h = s.kernel_w = k;
    s.groups = groups;
    s.out_h = s.out_w = ho;
    s.batch_norm = bn;
    return s;
  };
  // Hand counts: 32*16*9 = 4608, 4608*64 = 294912; 24*1*9 = 216, 216*64 =
  // 13824; 8*24 + 2*8 = 208, 192*16 = 3072.
  const std::vector<Fixed> fixed{
      {"conv3x3 16->32 @8x8", make("a", ConvKind::kStandard, 32, 16, 3, 1, 8, false), 4608, 294912},
      {"depthwise3x3 24 @8x8", make("b", ConvKind::kDepthwise, 24, 24, 3, 24, 8, false), 216, 13824},
      {"pointwise 24->8 +bn @4x4", make("c", ConvKind::kPointwise, 8, 24, 1, 1, 4, true), 208, 3072},
  };
  for (const auto& f : fixed) {
    c.guard(f.name, [&] {
      SharingGraph g;
      const LatentId out = g.add_latent("out", f.spec.out_channels, true);
      const LatentId in = g.add_latent("in", f.spec.weight_in_channels(), false);
      g.add_layer(f.spec, {LatentBinding::of(in), LatentBinding::of(out)});
      const auto acc = account(g, full_masks(g));
      c.expect(acc.params_full == f.params && acc.flops_full == f.flops,
               f.name + ": counted params " + std::to_string(acc.params_full) + " flops " +
                   std::to_string(acc.flops_full));
      c.expect(acc.flops_ratio() == 1.0 && acc.params_ratio() == 1.0,
               f.name + ": unmasked ratio must be 1");
    });
  }

  c.guard("halving ratio", [&] {
    SharingGraph g;
    const LatentId out = g.add_latent("out", 32, true);
    const LatentId in = g.add_latent("in", 16, true);
    g.add_layer(fixed[0].spec, {LatentBinding::of(in), LatentBinding::of(out)});
    auto masks = full_masks(g);
    for (std::size_t i = 0; i < 16; ++i) masks[out].bits[i] = 0;
    for (std::size_t i = 0; i < 8; ++i) masks[in].bits[i] = 0;
    const auto acc = account(g, masks);
    c.expect(acc.flops_ratio() == 0.25, "halving n and c must give FLOPs ratio 0.25, got " +
                                            num(acc.flops_ratio()));
    const auto twice = account(g, masks, 2);
    c.expect(twice.flops_ratio() == acc.flops_ratio() && twice.flops_full == 2 * acc.flops_full,
             "FLOPs ratio must not depend on the MAC convention");
  });

  c.guard("monotonicity", [&] {
    NetDescription d;
    d.family = Family::kResidual;
    d.widths = {8, 16};
    const SharingGraph g = build_sharing_graph(d);
    Rng rng(12);
    auto masks = full_masks(g);
    auto prev = account(g, masks);
    for (int step = 0; step < 40; ++step) {
      const LatentId id = rng.index(g.latents().size());
      if (!g.latents()[id].sparsifiable) continue;
      masks[id].bits[rng.index(masks[id].bits.size())] = 0;
      const auto next = account(g, masks);
      c.expect(next.flops_masked <= prev.flops_masked && next.params_masked <= prev.params_masked,
               "zeroing a mask bit increased a count");
      c.expect(account(g, masks, 2).flops_ratio() == next.flops_ratio(),
               "FLOPs ratio must not depend on the MAC convention");
      prev = next;
    }
  });

  c.guard("stop rule", [&] {
    CompressionAccount acc;
    acc.flops_full = 10000;
    acc.flops_masked = 5196;
    c.expect(should_stop(acc, 0.5), "0.5196 vs 0.50 is inside the 2% window");
    acc.flops_masked = 5500;
    c.expect(!should_stop(acc, 0.5), "0.55 vs 0.50 is outside the 2% window");
    acc.flops_masked = 5000;
    c.expect(should_stop(acc, 0.5), "exact target must stop");
  });

  c.guard("mask derivation", [&] {
    SharingGraph g;
    g.add_latent("z", 3, true);
    g.add_latent("frozen", 2, false);
    std::vector<LatentVector> z{LatentVector::zeros(3, true, "z"),
                                LatentVector::zeros(2, false, "frozen")};
    z[0].values.mutable_value() = Tensor::vector({0.5, 1e-4, -0.3});
    const auto masks = derive_masks(g, z, 5e-3);
    c.expect(masks[0].bits == std::vector<std::uint8_t>{1, 0, 1}, "[0.5,1e-4,-0.3] must mask to [1,0,1]");
    c.expect(masks[1].bits == std::vector<std::uint8_t>{1, 1}, "frozen latent must stay all ones");
  });
  return c.finish(start);
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"prox", "gradcheck", "equivalence", "sharing",
                                              "accounting"};
  return names;
}

SuiteReport run_suite(const std::string& name) {
  if (name == "prox") return verify_prox();
  if (name == "gradcheck") return verify_gradcheck();
  if (name == "equivalence") return verify_equivalence();
  if (name == "sharing") return verify_sharing();
  if (name == "accounting") return verify_accounting();
  throw std::invalid_argument("unknown suite '" + name + "'");
}

}  // namespace dhp::tools
