#pragma once

#include <random>
#include <vector>

#include "sfdm/backends.hpp"
#include "sfdm/config.hpp"
#include "sfdm/nn.hpp"

namespace sfdm {

/// Input/output shapes of the three modules, derived from configuration
/// alone (usable at reference scale without allocating anything).
struct DemorpherShapes {
  Shape fdm_input, fdm_output;
  Shape idm_input, idm_latent, idm_features;
  Shape ffm_input, ffm_output;
};
DemorpherShapes demorpher_shapes(const BackendConfig& backend, const ModelConfig& model);

/// Batched intermediate and final tensors of one forward pass.
struct DemorphTrace {
  Var f_doc, f_ref;     // encoder features, constants
  Var f_fdm, f_idm;
  Var f_out;            // [N, C, h, w]
  Var w_out;            // [N, L, D]
  Var image;            // [N, 3, S, S]
};

struct DemorphResult {
  ImageTensor image;
  FeatureMap features;
  LatentCode latent;
};

/// Feature demorphing module: ResNet-IR stack over the channel-wise
/// concatenation of the document and reference feature maps. A 1x1 skip
/// (initialized to pass the document through) is summed with a zero-initialized
/// projection of the stack, so training starts from reconstruction.
class FeatureDemorphModule {
 public:
  FeatureDemorphModule() = default;
  FeatureDemorphModule(const BackendConfig& backend, const ModelConfig& model, std::mt19937_64& rng);
  Var forward(Tape& tape, const Var& f_doc, const Var& f_ref, bool training) const;
  void collect(nn::ParameterList& out);

 private:
  std::vector<nn::ResNetIRBlock> blocks_;
  nn::Conv2d skip_, proj_;
};

/// Image demorphing module: strided ResNet-IR encoder over the 6-channel
/// pixel concatenation, with a lateral head for F_IDM at the injection scale
/// and a flattened affine head for the full latent code. The latent code also
/// gets an affine skip straight from the input pixels, which warm_start fills
/// with a linearization of the frozen encoder.
class ImageDemorphModule {
 public:
  ImageDemorphModule() = default;
  ImageDemorphModule(const BackendConfig& backend, const ModelConfig& model, std::mt19937_64& rng);
  /// Returns (w_out [N, L, D], F_IDM [N, C, h, w]).
  std::pair<Var, Var> forward(Tape& tape, const Var& doc, const Var& ref, bool training) const;
  void collect(nn::ParameterList& out);

 private:
  BackendConfig cfg_;
  nn::Conv2d stem_;
  nn::BatchNorm2d stem_bn_;
  nn::PReLU stem_act_;
  std::vector<nn::ResNetIRBlock> down_;
  nn::Conv2d lateral_;
  nn::ResNetIRBlock tail_;
  nn::Linear latent_head_;
  nn::Linear latent_skip_;

  friend class DemorpherModel;
};

/// Feature fusion module: ResNet-IR stack merging F_FDM and F_IDM.
class FeatureFusionModule {
 public:
  FeatureFusionModule() = default;
  FeatureFusionModule(const BackendConfig& backend, const ModelConfig& model, std::mt19937_64& rng);
  Var forward(Tape& tape, const Var& f_fdm, const Var& f_idm, bool training) const;
  void collect(nn::ParameterList& out);

 private:
  std::vector<nn::ResNetIRBlock> blocks_;
  nn::Conv2d skip_, proj_;
};

class DemorpherModel {
 public:
  DemorpherModel(const BackendConfig& backend, const ModelConfig& model);

  DemorpherModel(const DemorpherModel&) = delete;
  DemorpherModel& operator=(const DemorpherModel&) = delete;

  /// Full pass over a batch of (doc, ref) images [N, 3, S, S].
  DemorphTrace forward(Tape& tape, const Backends& backends, const Tensor& docs, const Tensor& refs,
                       bool training) const;

  /// Stand-in for starting from pre-trained encoder weights: sets the IDM
  /// latent skip to the encoder's linearization around the zero image, applied
  /// to the document half of the input. Exact for linear encoders.
  void warm_start(const Encoder& encoder);

  nn::ParameterList fdm_parameters();
  nn::ParameterList idm_parameters();
  nn::ParameterList ffm_parameters();
  /// fdm, idm, ffm in that order.
  nn::ParameterList parameters();

  const FeatureDemorphModule& fdm() const { return fdm_; }
  const ImageDemorphModule& idm() const { return idm_; }
  const FeatureFusionModule& ffm() const { return ffm_; }
  const BackendConfig& backend_config() const { return backend_; }
  const ModelConfig& model_config() const { return model_; }

 private:
  BackendConfig backend_;
  ModelConfig model_;
  FeatureDemorphModule fdm_;
  ImageDemorphModule idm_;
  FeatureFusionModule ffm_;
};

// Single-sample evaluation-mode wrappers.
FeatureMap fdm_forward(const DemorpherModel& model, const FeatureMap& f_doc, const FeatureMap& f_ref);
std::pair<LatentCode, FeatureMap> idm_forward(const DemorpherModel& model, const ImageTensor& doc,
                                              const ImageTensor& ref);
FeatureMap ffm_forward(const DemorpherModel& model, const FeatureMap& f_fdm, const FeatureMap& f_idm);

/// Restores the identity absent from the reference. Ground truth, if any, is
/// ignored.
DemorphResult demorph(const DocumentPair& pair, const DemorpherModel& model, const Backends& backends);
/// Evaluation-mode demorphing of a batch; returns output images [N, 3, S, S].
Tensor demorph_batch(const Tensor& docs, const Tensor& refs, const DemorpherModel& model, const Backends& backends);

}  // namespace sfdm
