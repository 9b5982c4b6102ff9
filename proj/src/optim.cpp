#include "sfdm/optim.hpp"

#include <cmath>

#include "sfdm/error.hpp"

namespace sfdm::optim {

namespace {

void save_named(BinaryWriter& out, const nn::ParameterList& params, const std::vector<Tensor>& state) {
  out.u64(state.size());
  std::size_t j = 0;
  for (const Parameter* p : params) {
    if (!p->trainable) continue;
    out.str(p->name);
    out.tensor(state[j++]);
  }
}

void load_named(BinaryReader& in, const nn::ParameterList& params, std::vector<Tensor>& state) {
  if (in.u64() != state.size()) throw StateMismatch("optimizer state has a different parameter count");
  std::size_t j = 0;
  for (const Parameter* p : params) {
    if (!p->trainable) continue;
    const std::string name = in.str();
    Tensor t = in.tensor();
    if (name != p->name || t.shape() != p->value.shape())
      throw StateMismatch("optimizer state does not match parameter " + p->name);
    state[j++] = std::move(t);
  }
}

std::vector<Tensor> zeros_like_trainable(const nn::ParameterList& params) {
  std::vector<Tensor> out;
  for (const Parameter* p : params)
    if (p->trainable) out.emplace_back(p->value.shape());
  return out;
}

}  // namespace

Optimizer::Optimizer(nn::ParameterList params) : params_(std::move(params)) {}

void Optimizer::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

Adam::Adam(nn::ParameterList params, AdamOptions opt) : Optimizer(std::move(params)), opt_(opt) {
  m_ = zeros_like_trainable(params_);
  v_ = zeros_like_trainable(params_);
}

void Adam::step() {
  ++t_;
  const double t = static_cast<double>(t_);
  const double b1 = opt_.beta1, b2 = opt_.beta2;
  const double bc1 = 1 - std::pow(b1, t), bc2 = 1 - std::pow(b2, t);
  bool adaptive = true;
  double rect = 1.0;
  if (opt_.rectified) {
    const double rho_inf = 2 / (1 - b2) - 1;
    const double rho_t = rho_inf - 2 * t * std::pow(b2, t) / bc2;
    adaptive = rho_t > opt_.sma_threshold;
    if (adaptive)
      rect = std::sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t));
  }
  std::size_t j = 0;
  for (Parameter* p : params_) {
    if (!p->trainable) continue;
    Tensor& m = m_[j];
    Tensor& v = v_[j];
    ++j;
    if (p->grad.shape() != p->value.shape()) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const double mhat = m[i] / bc1;
      if (adaptive)
        p->value[i] -= opt_.lr * rect * mhat / (std::sqrt(v[i] / bc2) + opt_.eps);
      else
        p->value[i] -= opt_.lr * mhat;
    }
  }
}

void Adam::save(BinaryWriter& out) const {
  out.str(opt_.rectified ? "radam" : "adam");
  out.u64(t_);
  save_named(out, params_, m_);
  save_named(out, params_, v_);
}

void Adam::load(BinaryReader& in) {
  if (in.str() != (opt_.rectified ? "radam" : "adam")) throw StateMismatch("optimizer kind differs");
  t_ = in.u64();
  load_named(in, params_, m_);
  load_named(in, params_, v_);
}

Lookahead::Lookahead(std::unique_ptr<Optimizer> inner, std::size_t k, double alpha)
    : Optimizer(inner->parameters()), inner_(std::move(inner)), k_(k), alpha_(alpha) {
  if (k_ == 0 || alpha_ < 0 || alpha_ > 1) throw ConfigError("lookahead needs k >= 1 and alpha in [0, 1]");
  for (const Parameter* p : params_)
    if (p->trainable) slow_.push_back(p->value);
}

void Lookahead::step() {
  inner_->step();
  if (++counter_ % k_ != 0) return;
  std::size_t j = 0;
  for (Parameter* p : params_) {
    if (!p->trainable) continue;
    Tensor& slow = slow_[j++];
    for (std::size_t i = 0; i < slow.size(); ++i) {
      slow[i] += alpha_ * (p->value[i] - slow[i]);
      p->value[i] = slow[i];
    }
  }
}

void Lookahead::save(BinaryWriter& out) const {
  out.str("lookahead");
  out.u64(counter_);
  save_named(out, params_, slow_);
  inner_->save(out);
}

void Lookahead::load(BinaryReader& in) {
  if (in.str() != "lookahead") throw StateMismatch("optimizer kind differs");
  counter_ = in.u64();
  load_named(in, params_, slow_);
  inner_->load(in);
}

std::unique_ptr<Optimizer> make_module_optimizer(const std::string& kind, nn::ParameterList params, double lr) {
  if (kind == "ranger") {
    AdamOptions o;
    o.lr = lr;
    o.beta1 = 0.95;
    o.beta2 = 0.999;
    o.eps = 1e-5;
    o.rectified = true;
    return std::make_unique<Lookahead>(std::make_unique<Adam>(std::move(params), o), 6, 0.5);
  }
  if (kind == "adam") {
    AdamOptions o;
    o.lr = lr;
    return std::make_unique<Adam>(std::move(params), o);
  }
  throw ConfigError("unknown optimizer: " + kind);
}

std::unique_ptr<Optimizer> make_disc_optimizer(nn::ParameterList params, double lr) {
  AdamOptions o;
  o.lr = lr;
  return std::make_unique<Adam>(std::move(params), o);
}

}  // namespace sfdm::optim
