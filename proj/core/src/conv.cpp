#include <Eigen/Dense>

#include <memory>
#include <string>

#include "dhp/ops.hpp"

namespace dhp::ops {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  std::size_t batch, in_ch, h, w;
  std::size_t out_ch, kh, kw;
  std::size_t stride, pad, groups;
  std::size_t ho, wo;

  std::size_t in_per_group() const { return in_ch / groups; }
  std::size_t out_per_group() const { return out_ch / groups; }
  std::size_t patch() const { return in_per_group() * kh * kw; }
  std::size_t columns() const { return batch * ho * wo; }
};

// Column matrix for one group: rows (c, ky, kx), columns (n, y, x).
void im2col(const double* x, const ConvGeometry& g, std::size_t group, double* col) {
  const std::size_t cols = g.columns();
  const std::size_t cpg = g.in_per_group();
  for (std::size_t c = 0; c < cpg; ++c) {
    const std::size_t ch = group * cpg + c;
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const double* plane = x + (n * g.in_ch + ch) * g.h * g.w;
          for (std::size_t y = 0; y < g.ho; ++y) {
            const long iy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.pad);
            double* dst = row + (n * g.ho + y) * g.wo;
            if (iy < 0 || iy >= static_cast<long>(g.h)) {
              for (std::size_t xo = 0; xo < g.wo; ++xo) dst[xo] = 0.0;
              continue;
            }
            for (std::size_t xo = 0; xo < g.wo; ++xo) {
              const long ix = static_cast<long>(xo * g.stride + kx) - static_cast<long>(g.pad);
              dst[xo] = (ix < 0 || ix >= static_cast<long>(g.w))
                            ? 0.0
                            : plane[static_cast<std::size_t>(iy) * g.w +
                                    static_cast<std::size_t>(ix)];
            }
          }
        }
      }
  }
}

void col2im(const double* col, const ConvGeometry& g, std::size_t group, double* dx) {
  const std::size_t cols = g.columns();
  const std::size_t cpg = g.in_per_group();
  for (std::size_t c = 0; c < cpg; ++c) {
    const std::size_t ch = group * cpg + c;
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t n = 0; n < g.batch; ++n) {
          double* plane = dx + (n * g.in_ch + ch) * g.h * g.w;
          for (std::size_t y = 0; y < g.ho; ++y) {
            const long iy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            const double* src = row + (n * g.ho + y) * g.wo;
            for (std::size_t xo = 0; xo < g.wo; ++xo) {
              const long ix = static_cast<long>(xo * g.stride + kx) - static_cast<long>(g.pad);
              if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
              plane[static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)] += src[xo];
            }
          }
        }
      }
  }
}

}  // namespace

Var conv2d(const Var& input, const Var& weight, const Conv2dOptions& options) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4) {
    throw ShapeError("conv2d: input " + to_string(xs) + " weight " + to_string(ws));
  }
  if (options.stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  if (options.groups == 0 || xs[1] != ws[1] * options.groups || ws[0] % options.groups != 0) {
    throw ShapeError("conv2d: channel mismatch, input " + to_string(xs) + " weight " +
                     to_string(ws) + " groups " + std::to_string(options.groups));
  }
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3],
                 options.stride, options.padding, options.groups, 0, 0};
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  const std::size_t cols = g.columns();
  const std::size_t patch = g.patch();
  const std::size_t opg = g.out_per_group();
  const std::size_t hw = g.ho * g.wo;

  // Cached columns feed the weight gradient.
  auto col_cache = std::make_shared<std::vector<double>>(g.groups * patch * cols);
  Tensor out(Shape{g.batch, g.out_ch, g.ho, g.wo});
  RowMatrix result(static_cast<Eigen::Index>(opg), static_cast<Eigen::Index>(cols));
  for (std::size_t grp = 0; grp < g.groups; ++grp) {
    double* col = col_cache->data() + grp * patch * cols;
    im2col(input.value().data().data(), g, grp, col);
    ConstMatMap wmat(weight.value().data().data() + grp * opg * patch,
                     static_cast<Eigen::Index>(opg), static_cast<Eigen::Index>(patch));
    ConstMatMap cmat(col, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(cols));
    result.noalias() = wmat * cmat;
    for (std::size_t o = 0; o < opg; ++o)
      for (std::size_t n = 0; n < g.batch; ++n) {
        const double* src = result.data() + o * cols + n * hw;
        double* dst = out.data().data() + (n * g.out_ch + grp * opg + o) * hw;
        std::copy_n(src, hw, dst);
      }
  }

  return Var::from_op(std::move(out), {input, weight}, [g, col_cache](detail::Node& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    const std::size_t cols = g.columns();
    const std::size_t patch = g.patch();
    const std::size_t opg = g.out_per_group();
    const std::size_t hw = g.ho * g.wo;
    Tensor gx = px->requires_grad ? Tensor(px->value.shape()) : Tensor();
    Tensor gw = pw->requires_grad ? Tensor(pw->value.shape()) : Tensor();
    RowMatrix gy(static_cast<Eigen::Index>(opg), static_cast<Eigen::Index>(cols));
    RowMatrix dcol;
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      for (std::size_t o = 0; o < opg; ++o)
        for (std::size_t n = 0; n < g.batch; ++n) {
          const double* src = self.grad.data().data() + (n * g.out_ch + grp * opg + o) * hw;
          std::copy_n(src, hw, gy.data() + o * cols + n * hw);
        }
      const double* col = col_cache->data() + grp * patch * cols;
      if (pw->requires_grad) {
        MatMap(gw.data().data() + grp * opg * patch, static_cast<Eigen::Index>(opg),
               static_cast<Eigen::Index>(patch))
            .noalias() +=
            gy * ConstMatMap(col, static_cast<Eigen::Index>(patch),
                             static_cast<Eigen::Index>(cols))
                     .transpose();
      }
      if (px->requires_grad) {
        ConstMatMap wmat(pw->value.data().data() + grp * opg * patch,
                         static_cast<Eigen::Index>(opg), static_cast<Eigen::Index>(patch));
        dcol.noalias() = wmat.transpose() * gy;
        col2im(dcol.data(), g, grp, gx.data().data());
      }
    }
    if (px->requires_grad) detail::accumulate(*px, gx);
    if (pw->requires_grad) detail::accumulate(*pw, gw);
  });
}

}  // namespace dhp::ops
