#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sfdm {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of doubles. Value type; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& vec() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // NCHW / CHW helpers, no bounds checks beyond debug asserts.
  double& at(std::size_t c, std::size_t h, std::size_t w);
  double at(std::size_t c, std::size_t h, std::size_t w) const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;
  double min() const;
  double max() const;
  double sum() const noexcept;
  double mean() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s) noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);
Tensor operator*(double s, Tensor a);

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
double squared_norm(const Tensor& t) noexcept;

/// Stacks equally-shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& items);
/// Inverse of stack: slice i of the leading axis.
Tensor unstack(const Tensor& batch, std::size_t i);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace sfdm
