#include "dhp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dhp {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(dhp::numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (dhp::numel(shape_) != data_.size()) {
    throw ShapeError("shape " + to_string(shape_) + " needs " +
                     std::to_string(dhp::numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index rank mismatch for " + to_string(shape_));
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw std::out_of_range("tensor index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }
double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
  if (dhp::numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::check_finite(const char* what) const {
  if (!all_finite()) throw NonFiniteError(std::string("non-finite value in ") + what);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor select_rows_cols(const Tensor& t, std::span<const std::size_t> rows,
                        std::span<const std::size_t> cols) {
  if (t.rank() < 2) throw ShapeError("select_rows_cols needs rank >= 2");
  const std::size_t n = t.dim(0), c = t.dim(1);
  const std::size_t inner = t.numel() / (n * c);
  Shape out_shape = t.shape();
  out_shape[0] = rows.size();
  out_shape[1] = cols.size();
  std::vector<double> out;
  out.reserve(rows.size() * cols.size() * inner);
  auto src = t.data();
  for (auto i : rows) {
    if (i >= n) throw std::out_of_range("row index out of range");
    for (auto j : cols) {
      if (j >= c) throw std::out_of_range("column index out of range");
      const std::size_t base = (i * c + j) * inner;
      out.insert(out.end(), src.begin() + base, src.begin() + base + inner);
    }
  }
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor select_axis0(const Tensor& t, std::span<const std::size_t> keep) {
  if (t.rank() < 1) throw ShapeError("select_axis0 needs rank >= 1");
  const std::size_t inner = t.numel() / t.dim(0);
  Shape out_shape = t.shape();
  out_shape[0] = keep.size();
  std::vector<double> out;
  out.reserve(keep.size() * inner);
  auto src = t.data();
  for (auto i : keep) {
    if (i >= t.dim(0)) throw std::out_of_range("index out of range");
    out.insert(out.end(), src.begin() + i * inner, src.begin() + (i + 1) * inner);
  }
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor select_axis1(const Tensor& t, std::span<const std::size_t> keep) {
  if (t.rank() < 2) throw ShapeError("select_axis1 needs rank >= 2");
  const std::size_t outer = t.dim(0), c = t.dim(1);
  const std::size_t inner = t.numel() / (outer * c);
  Shape out_shape = t.shape();
  out_shape[1] = keep.size();
  std::vector<double> out;
  out.reserve(outer * keep.size() * inner);
  auto src = t.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (auto j : keep) {
      if (j >= c) throw std::out_of_range("index out of range");
      const std::size_t base = (o * c + j) * inner;
      out.insert(out.end(), src.begin() + base, src.begin() + base + inner);
    }
  }
  return Tensor(std::move(out_shape), std::move(out));
}

}  // namespace dhp
