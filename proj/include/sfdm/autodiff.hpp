#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Tape records every operation applied to Vars; backward() replays the
// records in reverse order. Gradients of parameter leaves are accumulated into
// Parameter::grad so optimizers can consume them after the pass.

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sfdm/tensor.hpp"

namespace sfdm {

/// A named tensor owned by a module. Buffers (trainable == false) are saved in
/// checkpoints but never touched by optimizers.
struct Parameter {
  std::string name;
  Tensor value;
  mutable Tensor grad;
  bool trainable = true;

  void zero_grad() const { grad = Tensor(value.shape()); }
};

namespace ad {

class Tape;

class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is retained (inputs of gradient checks, R1 targets).
  Var variable(Tensor value);
  Var parameter(const Parameter& p);

  /// Seeds d(root)/d(root) = 1; root must hold a single element.
  void backward(const Var& root);

  bool requires_grad(const Var& v) const { return nodes_.at(v.id()).requires_grad; }
  /// Gradient accumulated at v (zeros when nothing flowed into it).
  Tensor grad(const Var& v) const;
  const Tensor& value(const Var& v) const { return nodes_.at(v.id()).value; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Records an op output. fn is dropped when no input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  /// Adds g into v's gradient when v requires one.
  void accumulate(const Var& v, const Tensor& g);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    const Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;
};

// Elementwise (identical shapes).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var scale(const Var& a, double s);
Var square(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
/// log(1 + exp(x)), evaluated without overflow.
Var softplus(const Var& a);
/// max(x, 0)^p; the derivative is taken as zero where x <= 0.
Var pow_scalar(const Var& a, double p);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
/// [N, ...] -> [N], summing everything but the leading axis.
Var sum_per_sample(const Var& a);
Var mean_per_sample(const Var& a);
/// [N, C, H, W] -> [N, C].
Var mean_spatial(const Var& a);

// Shape manipulation.
Var reshape(const Var& a, Shape shape);
/// Slice [start, start + len) along axis.
Var narrow(const Var& a, std::size_t axis, std::size_t start, std::size_t len);
/// Concatenates [N, Ca, ...] and [N, Cb, ...] along axis 1.
Var concat_channels(const Var& a, const Var& b);

// Linear algebra.
Var matmul(const Var& a, const Var& b);  // [M, K] x [K, N]
Var transpose(const Var& a);             // [M, N] -> [N, M]
Var add_rowvec(const Var& a, const Var& b);  // [M, N] + [N]
/// x [N, In] times a fixed matrix W [Out, In] transposed -> [N, Out].
Var matmul_fixed(const Var& x, std::shared_ptr<const Tensor> weight);
/// a, b [N, D] -> [N]
Var rowwise_dot(const Var& a, const Var& b);
/// Rows of [N, D] scaled to unit L2 norm.
Var l2_normalize_rows(const Var& a, double eps = 1e-12);

// Image ops, NCHW.
Var conv2d(const Var& x, const Var& weight, const Var* bias, std::size_t stride, std::size_t pad);
/// Same fixed K x K kernel on every channel, valid padding.
Var depthwise_conv_valid(const Var& x, std::shared_ptr<const Tensor> kernel);
Var avg_pool2(const Var& x);
/// Per-location unit norm across channels: x / sqrt(sum_c x^2 + eps).
Var normalize_channels(const Var& x, double eps = 1e-10);
Var prelu(const Var& x, const Var& alpha);

struct BatchNormBuffers {
  Parameter* running_mean;
  Parameter* running_var;
};
/// Training mode normalizes with batch statistics and updates the running
/// buffers; evaluation mode uses the buffers.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const BatchNormBuffers& buffers, bool training,
               double momentum, double eps = 1e-5);

}  // namespace ad
}  // namespace sfdm
