#include "sfdm/nn.hpp"

#include <cmath>
#include <cstring>

#include "sfdm/error.hpp"

namespace sfdm::nn {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv(std::uint64_t& h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.vec()) v = dist(rng);
  return t;
}

}  // namespace

std::uint64_t digest(const std::vector<const Parameter*>& params) {
  std::uint64_t h = kFnvOffset;
  for (const Parameter* p : params) {
    fnv(h, p->name.data(), p->name.size());
    for (std::size_t d : p->value.shape()) fnv(h, &d, sizeof d);
    fnv(h, p->value.data().data(), p->value.size() * sizeof(double));
  }
  return h;
}

std::uint64_t digest(const ParameterList& params) {
  return digest(std::vector<const Parameter*>(params.begin(), params.end()));
}

Conv2d::Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
               std::size_t pad, bool bias, std::mt19937_64& rng)
    : stride_(stride), pad_(pad) {
  const double fan_in = static_cast<double>(in * kernel * kernel);
  weight_ = Parameter{name + ".weight", normal_tensor({out, in, kernel, kernel}, std::sqrt(2.0 / fan_in), rng), {}};
  if (bias) bias_ = Parameter{name + ".bias", Tensor({out}), {}};
}

void Conv2d::set_pointwise(const std::vector<std::vector<double>>& map) {
  const Shape& s = weight_.value.shape();
  if (s[2] != 1 || s[3] != 1 || map.size() != s[0]) throw ShapeMismatch("set_pointwise: conv is not 1x1 or rows differ");
  auto w = weight_.value.data();
  for (std::size_t o = 0; o < s[0]; ++o) {
    if (map[o].size() != s[1]) throw ShapeMismatch("set_pointwise: column count differs");
    for (std::size_t i = 0; i < s[1]; ++i) w[o * s[1] + i] = map[o][i];
  }
  if (bias_) bias_->value = Tensor(bias_->value.shape());
}

Var Conv2d::forward(Tape& tape, const Var& x) const {
  Var w = tape.parameter(weight_);
  if (bias_) {
    Var b = tape.parameter(*bias_);
    return ad::conv2d(x, w, &b, stride_, pad_);
  }
  return ad::conv2d(x, w, nullptr, stride_, pad_);
}

void Conv2d::collect(ParameterList& out) {
  out.push_back(&weight_);
  if (bias_) out.push_back(&*bias_);
}

BatchNorm2d::BatchNorm2d(std::string name, std::size_t channels, double momentum)
    : gamma_{name + ".gamma", Tensor({channels}, 1.0), {}},
      beta_{name + ".beta", Tensor({channels}), {}},
      running_mean_{name + ".running_mean", Tensor({channels}), {}, false},
      running_var_{name + ".running_var", Tensor({channels}, 1.0), {}, false},
      momentum_(momentum) {}

Var BatchNorm2d::forward(Tape& tape, const Var& x, bool training) const {
  return ad::batch_norm(x, tape.parameter(gamma_), tape.parameter(beta_), {&running_mean_, &running_var_}, training,
                        momentum_);
}

void BatchNorm2d::collect(ParameterList& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

PReLU::PReLU(std::string name, std::size_t channels, double init) : alpha_{name + ".alpha", Tensor({channels}, init), {}} {}

Var PReLU::forward(Tape& tape, const Var& x) const { return ad::prelu(x, tape.parameter(alpha_)); }

void PReLU::collect(ParameterList& out) { out.push_back(&alpha_); }

Linear::Linear(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng, double init_scale)
    : weight_{name + ".weight", normal_tensor({out, in}, init_scale / std::sqrt(static_cast<double>(in)), rng), {}},
      bias_{name + ".bias", Tensor({out}), {}} {}

Var Linear::forward(Tape& tape, const Var& x) const {
  return ad::add_rowvec(ad::matmul(x, ad::transpose(tape.parameter(weight_))), tape.parameter(bias_));
}

void Linear::collect(ParameterList& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

ResNetIRBlock::ResNetIRBlock(const std::string& name, std::size_t in, std::size_t out, std::size_t stride,
                             std::mt19937_64& rng, double bn_momentum)
    : bn1_(name + ".bn1", in, bn_momentum),
      conv1_(name + ".conv1", in, out, 3, 1, 1, false, rng),
      bn2_(name + ".bn2", out, bn_momentum),
      prelu_(name + ".prelu", out),
      conv2_(name + ".conv2", out, out, 3, stride, 1, false, rng),
      bn3_(name + ".bn3", out, bn_momentum) {
  if (in != out || stride != 1) {
    shortcut_conv_.emplace(name + ".shortcut.conv", in, out, 1, stride, 0, false, rng);
    shortcut_bn_.emplace(name + ".shortcut.bn", out, bn_momentum);
  }
}

Var ResNetIRBlock::forward(Tape& tape, const Var& x, bool training) const {
  Var r = bn1_.forward(tape, x, training);
  r = conv1_.forward(tape, r);
  r = bn2_.forward(tape, r, training);
  r = prelu_.forward(tape, r);
  r = conv2_.forward(tape, r);
  r = bn3_.forward(tape, r, training);
  Var s = x;
  if (shortcut_conv_) s = shortcut_bn_->forward(tape, shortcut_conv_->forward(tape, x), training);
  return ad::add(r, s);
}

void ResNetIRBlock::collect(ParameterList& out) {
  bn1_.collect(out);
  conv1_.collect(out);
  bn2_.collect(out);
  prelu_.collect(out);
  conv2_.collect(out);
  bn3_.collect(out);
  if (shortcut_conv_) {
    shortcut_conv_->collect(out);
    shortcut_bn_->collect(out);
  }
}

Shape ResNetIRBlock::output_shape(const Shape& input_chw, std::size_t out_channels, std::size_t stride) {
  if (input_chw.size() != 3) throw ShapeMismatch("ResNetIRBlock::output_shape expects CxHxW");
  // 3x3 conv, pad 1: (h + 2 - 3) / stride + 1
  return {out_channels, (input_chw[1] - 1) / stride + 1, (input_chw[2] - 1) / stride + 1};
}

}  // namespace sfdm::nn
