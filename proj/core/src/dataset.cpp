#include "dhp/backbones.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace dhp {

std::string to_string(TaskKind k) { return k == TaskKind::kClusters ? "clusters" : "blur"; }

TaskKind parse_task_kind(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "clusters") return TaskKind::kClusters;
  if (t == "blur") return TaskKind::kBlur;
  throw std::invalid_argument("unknown task kind '" + text + "' (expected clusters or blur)");
}

void SyntheticTask::validate() const {
  if (train == 0 || val == 0) throw std::invalid_argument("task sample counts must be positive");
  if (channels == 0 || height == 0 || width == 0) {
    throw std::invalid_argument("task image shape must be positive");
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) {
    throw std::invalid_argument("task noise must be non-negative");
  }
  if (kind == TaskKind::kClusters && classes < 2) {
    throw std::invalid_argument("cluster task needs at least two classes");
  }
  if (upscale == 0) throw std::invalid_argument("task upscale must be positive");
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> index) {
  return select_axis0(t, index);
}

Tensor blur3x3(const Tensor& images) {
  if (images.rank() != 4) throw ShapeError("blur3x3 expects [N,C,H,W]");
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  Tensor out = Tensor::zeros(images.shape());
  const auto src = images.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* in = src.data() + p * h * w;
    double* o = dst.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
            const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) ||
                xx >= static_cast<std::ptrdiff_t>(w)) {
              continue;
            }
            s += in[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
          }
        }
        o[y * w + x] = s / 9.0;
      }
    }
  }
  return out;
}

Tensor upsample_nearest(const Tensor& images, std::size_t r) {
  if (images.rank() != 4) throw ShapeError("upsample_nearest expects [N,C,H,W]");
  if (r == 0) throw std::invalid_argument("upsample factor must be positive");
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  Tensor out = Tensor::zeros({n, c, h * r, w * r});
  const auto src = images.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t y = 0; y < h * r; ++y) {
      for (std::size_t x = 0; x < w * r; ++x) {
        dst[(p * h * r + y) * w * r + x] = src[(p * h + y / r) * w + x / r];
      }
    }
  }
  return out;
}

namespace {

// Smooth random image with unit per-pixel standard deviation.
Tensor smooth_field(Rng& rng, std::size_t c, std::size_t h, std::size_t w) {
  Tensor t = blur3x3(blur3x3(rng.normal_tensor({1, c, h, w})));
  double ss = 0.0;
  for (double v : t.data()) ss += v * v;
  const double scale = 1.0 / std::sqrt(ss / static_cast<double>(t.numel()));
  for (auto& v : t.data()) v *= scale;
  return t;
}

void fill_clusters(Rng& rng, const std::vector<Tensor>& prototypes, double noise,
                   std::size_t count, Tensor& x, std::vector<int>& labels) {
  const std::size_t k = prototypes.size();
  const std::size_t per = prototypes[0].numel();
  const Shape& s = prototypes[0].shape();
  x = Tensor::zeros({count, s[1], s[2], s[3]});
  std::vector<int> ordered(count);
  for (std::size_t i = 0; i < count; ++i) ordered[i] = static_cast<int>(i % k);
  const auto perm = rng.permutation(count);
  labels.resize(count);
  auto dst = x.data();
  for (std::size_t i = 0; i < count; ++i) {
    labels[i] = ordered[perm[i]];
    const auto proto = prototypes[static_cast<std::size_t>(labels[i])].data();
    for (std::size_t j = 0; j < per; ++j) dst[i * per + j] = proto[j] + noise * rng.normal();
  }
}

}  // namespace

Dataset gen_task(const SyntheticTask& task) {
  task.validate();
  Rng rng(task.seed);
  Dataset d;
  if (task.kind == TaskKind::kClusters) {
    std::vector<Tensor> prototypes;
    for (std::size_t k = 0; k < task.classes; ++k) {
      prototypes.push_back(smooth_field(rng, task.channels, task.height, task.width));
    }
    fill_clusters(rng, prototypes, task.noise, task.train, d.train_x, d.train_labels);
    fill_clusters(rng, prototypes, task.noise, task.val, d.val_x, d.val_labels);
    return d;
  }
  auto make = [&](std::size_t count, Tensor& x, Tensor& y) {
    x = Tensor::zeros({count, task.channels, task.height, task.width});
    auto dst = x.data();
    const std::size_t per = task.channels * task.height * task.width;
    for (std::size_t i = 0; i < count; ++i) {
      const Tensor f = smooth_field(rng, task.channels, task.height, task.width);
      const auto src = f.data();
      for (std::size_t j = 0; j < per; ++j) dst[i * per + j] = src[j] + task.noise * rng.normal();
    }
    y = blur3x3(x);
    if (task.upscale > 1) y = upsample_nearest(y, task.upscale);
  };
  make(task.train, d.train_x, d.train_y);
  make(task.val, d.val_x, d.val_y);
  return d;
}

}  // namespace dhp
