#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sfdm/autodiff.hpp"

namespace sfdm::nn {

using ad::Tape;
using ad::Var;

/// Flat, ordered view of a module's parameters and buffers.
using ParameterList = std::vector<Parameter*>;

/// FNV-1a 64 over names, shapes and raw bytes of every listed tensor.
std::uint64_t digest(const std::vector<const Parameter*>& params);
std::uint64_t digest(const ParameterList& params);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad,
         bool bias, std::mt19937_64& rng);

  Var forward(Tape& tape, const Var& x) const;
  void collect(ParameterList& out);

  std::size_t in_channels() const { return weight_.value.dim(1); }
  std::size_t out_channels() const { return weight_.value.dim(0); }
  std::size_t stride() const { return stride_; }
  Parameter& weight() { return weight_; }
  /// Overwrites the weight with a 1x1 channel map [out, in] and zeroes the bias.
  void set_pointwise(const std::vector<std::vector<double>>& map);

 private:
  Parameter weight_;
  std::optional<Parameter> bias_;
  std::size_t stride_ = 1;
  std::size_t pad_ = 0;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(std::string name, std::size_t channels, double momentum = 0.1);

  /// Training mode updates the running statistics (single writer).
  Var forward(Tape& tape, const Var& x, bool training) const;
  void collect(ParameterList& out);

  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }

 private:
  Parameter gamma_, beta_;
  mutable Parameter running_mean_, running_var_;
  double momentum_ = 0.1;
};

class PReLU {
 public:
  PReLU() = default;
  PReLU(std::string name, std::size_t channels, double init = 0.25);
  Var forward(Tape& tape, const Var& x) const;
  void collect(ParameterList& out);

 private:
  Parameter alpha_;
};

/// y = x W^T + b on [N, In].
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng, double init_scale = 1.0);
  Var forward(Tape& tape, const Var& x) const;
  void collect(ParameterList& out);

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  Parameter weight_, bias_;
};

/// Improved residual unit: BN -> 3x3 conv -> BN -> PReLU -> 3x3 conv(stride) -> BN,
/// summed with an identity shortcut, or a 1x1 conv + BN projection when the
/// channel count or stride changes.
class ResNetIRBlock {
 public:
  ResNetIRBlock() = default;
  ResNetIRBlock(const std::string& name, std::size_t in, std::size_t out, std::size_t stride, std::mt19937_64& rng,
                double bn_momentum = 0.1);

  Var forward(Tape& tape, const Var& x, bool training) const;
  void collect(ParameterList& out);

  bool has_projection() const { return shortcut_conv_.has_value(); }
  static Shape output_shape(const Shape& input_chw, std::size_t out_channels, std::size_t stride);

 private:
  BatchNorm2d bn1_;
  Conv2d conv1_;
  BatchNorm2d bn2_;
  PReLU prelu_;
  Conv2d conv2_;
  BatchNorm2d bn3_;
  std::optional<Conv2d> shortcut_conv_;
  std::optional<BatchNorm2d> shortcut_bn_;
};

}  // namespace sfdm::nn
