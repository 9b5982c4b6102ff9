#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sfdm/nn.hpp"
#include "sfdm/serialize.hpp"

namespace sfdm::optim {

/// Updates the trainable entries of a parameter list from their accumulated
/// gradients. Buffers are skipped.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step() = 0;
  virtual void save(BinaryWriter& out) const = 0;
  /// Restores state written by save for the same parameter list; a name or
  /// shape disagreement raises StateMismatch.
  virtual void load(BinaryReader& in) = 0;
  void zero_grad();
  const nn::ParameterList& parameters() const { return params_; }

 protected:
  explicit Optimizer(nn::ParameterList params);
  nn::ParameterList params_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Rectified variant: variance-adaptive steps only once the length of the
  /// approximated moving average exceeds sma_threshold.
  bool rectified = false;
  double sma_threshold = 5.0;
};

class Adam final : public Optimizer {
 public:
  Adam(nn::ParameterList params, AdamOptions opt);
  void step() override;
  void save(BinaryWriter& out) const override;
  void load(BinaryReader& in) override;
  std::uint64_t steps() const { return t_; }
  const AdamOptions& options() const { return opt_; }

 private:
  AdamOptions opt_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Keeps slow weights; every k inner steps they move alpha of the way to the
/// fast weights, which are then reset onto them.
class Lookahead final : public Optimizer {
 public:
  Lookahead(std::unique_ptr<Optimizer> inner, std::size_t k = 6, double alpha = 0.5);
  void step() override;
  void save(BinaryWriter& out) const override;
  void load(BinaryReader& in) override;

 private:
  std::unique_ptr<Optimizer> inner_;
  std::size_t k_;
  double alpha_;
  std::uint64_t counter_ = 0;
  std::vector<Tensor> slow_;
};

/// "ranger": lookahead over rectified Adam with betas (0.95, 0.999) and eps
/// 1e-5. "adam": plain Adam with betas (0.9, 0.999).
std::unique_ptr<Optimizer> make_module_optimizer(const std::string& kind, nn::ParameterList params, double lr);
std::unique_ptr<Optimizer> make_disc_optimizer(nn::ParameterList params, double lr);

}  // namespace sfdm::optim
