#include "sfdm/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sfdm/error.hpp"

namespace sfdm {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != numel(shape_)) {
    throw ShapeMismatch("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                        shape_str(shape_));
  }
}

double& Tensor::at(std::size_t c, std::size_t h, std::size_t w) {
  assert(rank() == 3);
  return data_[(c * shape_[1] + h) * shape_[2] + w];
}

double Tensor::at(std::size_t c, std::size_t h, std::size_t w) const {
  assert(rank() == 3);
  return data_[(c * shape_[1] + h) * shape_[2] + w];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeMismatch("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::min() const {
  if (data_.empty()) throw ShapeMismatch("min of empty tensor");
  return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
  if (data_.empty()) throw ShapeMismatch("max of empty tensor");
  return *std::max_element(data_.begin(), data_.end());
}

double Tensor::sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::mean() const {
  if (data_.empty()) throw ShapeMismatch("mean of empty tensor");
  return sum() / static_cast<double>(data_.size());
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) noexcept {
  for (auto& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }
Tensor operator*(double s, Tensor a) { return a *= s; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(const Tensor& t) noexcept {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return s;
}

Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) throw ShapeMismatch("stack of zero tensors");
  Shape shape = items.front().shape();
  std::vector<double> data;
  data.reserve(items.size() * items.front().size());
  for (const auto& t : items) {
    if (t.shape() != shape) {
      throw ShapeMismatch("stack: " + shape_str(t.shape()) + " vs " + shape_str(shape));
    }
    data.insert(data.end(), t.vec().begin(), t.vec().end());
  }
  shape.insert(shape.begin(), items.size());
  return Tensor(std::move(shape), std::move(data));
}

Tensor unstack(const Tensor& batch, std::size_t i) {
  if (batch.rank() < 1 || i >= batch.dim(0)) throw ShapeMismatch("unstack index out of range");
  Shape shape(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t n = numel(shape);
  std::vector<double> data(batch.vec().begin() + static_cast<std::ptrdiff_t>(i * n),
                           batch.vec().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
  return Tensor(std::move(shape), std::move(data));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace sfdm
