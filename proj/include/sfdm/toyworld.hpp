#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sfdm/backends.hpp"
#include "sfdm/config.hpp"
#include "sfdm/dmad.hpp"

namespace sfdm {

struct ToyIdentity {
  std::string id;
  std::vector<double> z;
};

enum class CaptureDomain { Document, Live };

struct CaptureParams {
  CaptureDomain domain = CaptureDomain::Document;
  double noise_sigma = 0.0;
  double illum_shift = 0.0;
  std::uint64_t noise_seed = 0;
};

/// Synthetic identities living in the range of the toy generator. An
/// identity z maps linearly to a generator code whose image directions are
/// orthonormal, so the per-pixel spread of renders is corpus.pixel_std.
class ToyWorld {
 public:
  ToyWorld(const CorpusConfig& cfg, const Backends& backends);

  /// Redraws z until the document render stays inside [-0.98, 0.98].
  ToyIdentity sample_identity(std::mt19937_64& rng, std::string id) const;
  /// Concatenated generator code [vec(F); vec(w_tail)].
  std::vector<double> code(const ToyIdentity& identity) const;
  FeatureMap feature_map(const ToyIdentity& identity) const;
  /// Document renders are exact generator outputs; live captures add pixel
  /// noise and a global illumination offset and are clipped to [-1, 1].
  ImageTensor render(const ToyIdentity& identity, const CaptureParams& params) const;
  CaptureParams live_params(std::mt19937_64& rng) const;

  const CorpusConfig& config() const { return cfg_; }
  const Backends& backends() const { return backends_; }

 private:
  CorpusConfig cfg_;
  Backends backends_;
  Tensor basis_;  // [code_dim, id_dim]
};

/// alpha * a + (1 - alpha) * c, clipped to [-1, 1].
ImageTensor morph_blend(const ImageTensor& a, const ImageTensor& c, double alpha);
/// Blend inside mask (1) and the accomplice a outside (0).
ImageTensor morph_splice(const ImageTensor& a, const ImageTensor& c, double alpha, const Tensor& mask);
/// Centered square [size, size] mask covering about area_fraction of the image.
Tensor centered_square_mask(std::size_t size, double area_fraction);

/// Exact missing-contributor feature map of a blend morph in the linear world.
FeatureMap analytic_demorph_oracle(const FeatureMap& f_morph, const FeatureMap& f_ref, double alpha);

enum class CorruptionKind { Brightness, GaussianNoise, Downsample };
CorruptionKind parse_corruption(std::string_view s);
std::string_view to_string(CorruptionKind k);
/// Severity 0 is the identity; 1..5 index fixed tables. Downsampling halves
/// each side then resizes back.
ImageTensor corrupt(const ImageTensor& image, CorruptionKind kind, int severity, std::uint64_t seed = 0);
double brightness_delta(int severity);
double noise_sigma(int severity);

/// Extra toy recognizers for multi-system checks; index 0 is the default one.
std::shared_ptr<const FaceRecognizer> make_toy_frs(const BackendConfig& cfg, std::size_t index);

struct CorpusIdentity {
  ToyIdentity identity;
  std::string split;  // "train" or "test"
  ImageTensor doc;
  std::vector<ImageTensor> live;
};

struct CorpusMorph {
  std::string id;
  std::size_t accomplice = 0;  // index into identities
  std::size_t criminal = 0;
  double alpha = 0.5;
  std::string method;   // blend | splice
  std::string pairing;  // random | lookalike
  bool accepted = false;
  std::string split;
  ImageTensor image;
};

/// Toy stand-in for a morph database. Images are stored 8-bit, and the
/// in-memory copies are already quantized so a reloaded corpus is identical.
struct ToyCorpus {
  CorpusConfig config;
  BackendConfig backend;
  std::vector<CorpusIdentity> identities;
  std::vector<CorpusMorph> morphs;
  Threshold calibration;

  /// JSON text with keys config, identities, bonafide_entries, morph_entries,
  /// calibration.
  std::string manifest_text() const;
  std::string digest() const;
  void save(const std::filesystem::path& dir) const;
  static ToyCorpus load(const std::filesystem::path& dir);

  std::size_t index_of(const std::string& id) const;
};

/// Mated (document vs own live captures) and non-mated (document vs others'
/// live captures) FRS scores.
std::pair<std::vector<double>, std::vector<double>> mated_nonmated_scores(const std::vector<CorpusIdentity>& ids,
                                                                          const FaceRecognizer& frs);

/// Builds identities, captures and morphs and calibrates tau at
/// corpus.target_fmr on the whole identity set.
ToyCorpus build_corpus(const CorpusConfig& cfg, const Backends& backends);
/// Same, with an externally fixed tau for the acceptance filter.
ToyCorpus build_corpus(const CorpusConfig& cfg, const Backends& backends, const Threshold& tau);

}  // namespace sfdm
