#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sfdm/autodiff.hpp"
#include "sfdm/config.hpp"
#include "sfdm/core.hpp"
#include "sfdm/nn.hpp"

namespace sfdm {

using ad::Tape;
using ad::Var;

/// Unit-norm identity embedding.
class Embedding {
 public:
  Embedding() = default;
  /// Normalizes v; an all-zero vector maps to the first basis vector so the
  /// unit-norm invariant always holds.
  explicit Embedding(std::vector<double> v);

  const std::vector<double>& values() const noexcept { return v_; }
  std::size_t dim() const noexcept { return v_.size(); }

 private:
  std::vector<double> v_;
};

/// Frozen style-feature encoder: image -> (w, F).
class Encoder {
 public:
  virtual ~Encoder() = default;
  /// images [N, 3, S, S] -> (w [N, L, D], F [N, C, h, w]).
  virtual std::pair<Tensor, Tensor> encode_batch(const Tensor& images) const = 0;
  virtual std::uint64_t digest() const = 0;

  std::pair<LatentCode, FeatureMap> encode(const ImageTensor& image) const;
};

/// Frozen generator, synthesizing from the layer-k feature map and the tail
/// of the latent code.
class Generator {
 public:
  virtual ~Generator() = default;
  /// F [N, C, h, w], w_tail [N, L - k, D] -> images [N, 3, S, S].
  virtual Var synthesize(Tape& tape, const Var& features, const Var& w_tail) const = 0;
  virtual std::uint64_t digest() const = 0;

  ImageTensor synthesize(const FeatureMap& features, const LatentCode& w_tail) const;
};

class FaceRecognizer {
 public:
  virtual ~FaceRecognizer() = default;
  /// images [N, 3, S, S] -> unit rows [N, frs_dim].
  virtual Var embed(Tape& tape, const Var& images) const = 0;
  virtual std::uint64_t digest() const = 0;
  virtual std::string name() const = 0;

  Embedding embed(const ImageTensor& image) const;
  std::vector<Embedding> embed_batch(const Tensor& images) const;
};

/// Cosine similarity of unit vectors, clamped to [-1, 1].
double similarity(const Embedding& a, const Embedding& b);

class PerceptualNet {
 public:
  virtual ~PerceptualNet() = default;
  /// One feature tensor [N, C_s, H_s, W_s] per stage.
  virtual std::vector<Var> features(Tape& tape, const Var& images) const = 0;
  virtual std::uint64_t digest() const = 0;

  std::vector<FeatureMap> features(const ImageTensor& image) const;
};

/// Trainable real/fake critic. Buffers and weights are exposed for the
/// optimizer and checkpoints.
class Discriminator {
 public:
  virtual ~Discriminator() = default;
  /// images [N, 3, S, S] -> logits [N].
  virtual Var logit(Tape& tape, const Var& images) const = 0;

  struct WithInputGradient {
    Var logit;            // [N]
    Var grad_sq_norm;     // [N], ||d logit / d image||^2, differentiable in the weights
  };
  /// Logits plus the squared input-gradient norm built as a tape expression,
  /// so the gradient penalty can itself be differentiated.
  virtual WithInputGradient logit_with_input_gradient(Tape& tape, const Var& images) const = 0;
  virtual nn::ParameterList parameters() = 0;

  double logit(const ImageTensor& image) const;
  std::uint64_t digest();
};

/// Background removal and alignment stand-in: resize to the configured size
/// and map to [-1, 1].
class Preprocessor {
 public:
  virtual ~Preprocessor() = default;
  virtual ImageTensor operator()(const Tensor& raw) const = 0;
};

/// The linear toy generator: image = M [vec(F); vec(w_tail)], where the
/// feature path is a fixed pixel-shuffle upsampling followed by a mild blur
/// and the style path adds low-frequency colour patterns.
class ToyGenerator final : public Generator {
 public:
  explicit ToyGenerator(const BackendConfig& cfg);

  Var synthesize(Tape& tape, const Var& features, const Var& w_tail) const override;
  std::uint64_t digest() const override;
  using Generator::synthesize;

  /// Dense map [3 S S, feature_dim + tail_dim].
  const Tensor& matrix() const { return *matrix_; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t tail_dim() const { return tail_dim_; }
  const BackendConfig& config() const { return cfg_; }
  /// Matrix-vector product with a concatenated [vec(F); vec(w_tail)] vector.
  std::vector<double> apply(const std::vector<double>& code) const;

 private:
  BackendConfig cfg_;
  std::shared_ptr<const Tensor> matrix_;
  std::size_t feature_dim_ = 0, tail_dim_ = 0;
};

/// Moore-Penrose inverse of the toy generator for F and w_tail; the head
/// layers of w (0..k-1, unused by synthesis) are a fixed random projection.
class ToyEncoder final : public Encoder {
 public:
  ToyEncoder(const BackendConfig& cfg, const ToyGenerator& generator);

  std::pair<Tensor, Tensor> encode_batch(const Tensor& images) const override;
  std::uint64_t digest() const override;

 private:
  BackendConfig cfg_;
  Tensor pinv_;  // [feature_dim + tail_dim, 3 S S]
  Tensor head_;  // [k D, 3 S S]
};

/// normalize(P x) with spatially smoothed, zero-mean projection rows, which
/// makes the embedding invariant to a global brightness offset.
class ToyFaceRecognizer final : public FaceRecognizer {
 public:
  ToyFaceRecognizer(const BackendConfig& cfg, std::uint64_t seed, std::string name = "toy_frs");

  Var embed(Tape& tape, const Var& images) const override;
  std::uint64_t digest() const override;
  std::string name() const override { return name_; }
  using FaceRecognizer::embed;

 private:
  BackendConfig cfg_;
  std::shared_ptr<const Tensor> projection_;  // [frs_dim, 3 S S]
  std::string name_;
};

/// Three stride-2 convolution stages with tanh and unit channel norm.
class ToyPerceptualNet final : public PerceptualNet {
 public:
  explicit ToyPerceptualNet(const BackendConfig& cfg);

  std::vector<Var> features(Tape& tape, const Var& images) const override;
  std::uint64_t digest() const override;
  using PerceptualNet::features;

 private:
  std::vector<Tensor> weights_;
};

/// Single-hidden-layer critic on flattened pixels: w2 . tanh(W1 x + b1) + b2.
class MlpDiscriminator final : public Discriminator {
 public:
  MlpDiscriminator(const BackendConfig& cfg, std::uint64_t seed);

  Var logit(Tape& tape, const Var& images) const override;
  WithInputGradient logit_with_input_gradient(Tape& tape, const Var& images) const override;
  nn::ParameterList parameters() override;
  using Discriminator::logit;

 private:
  Parameter w1_, b1_, w2_, b2_;
};

/// Resizes with bilinear interpolation and maps 8-bit ranges to [-1, 1].
class ResizePreprocessor final : public Preprocessor {
 public:
  explicit ResizePreprocessor(std::size_t size) : size_(size) {}
  ImageTensor operator()(const Tensor& raw) const override;

 private:
  std::size_t size_;
};

/// Bilinear resize of [C, H, W] (half-pixel centres, edge clamped).
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

struct Backends {
  BackendConfig config;
  std::shared_ptr<const Encoder> encoder;
  std::shared_ptr<const Generator> generator;
  std::shared_ptr<const FaceRecognizer> frs;
  std::shared_ptr<const PerceptualNet> perceptual;
  std::shared_ptr<const Preprocessor> preprocess;

  /// Combined digest of every frozen component.
  std::uint64_t frozen_digest() const;
  /// The toy generator, or ConfigError when the backends are not toy ones.
  const ToyGenerator& toy_generator() const;
};

/// Builds the analytic toy backends. Configurations larger than desk scale
/// are rejected with ConfigError (the dense toy maps would not fit).
Backends make_toy_backends(const BackendConfig& cfg);
std::unique_ptr<Discriminator> make_discriminator(const BackendConfig& cfg, std::uint64_t seed);

}  // namespace sfdm
