#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "sfdm/error.hpp"
#include "sfdm/tensor.hpp"

namespace sfdm {

/// C x H x W image in [-1, 1] (after preprocessing). Rejects non-finite data.
class ImageTensor {
 public:
  ImageTensor() = default;
  explicit ImageTensor(Tensor data);

  const Tensor& tensor() const noexcept { return data_; }
  std::size_t channels() const { return data_.dim(0); }
  std::size_t height() const { return data_.dim(1); }
  std::size_t width() const { return data_.dim(2); }
  const Shape& shape() const noexcept { return data_.shape(); }
  bool in_range() const;

 private:
  Tensor data_;
};

/// W+ code, layers x dim.
class LatentCode {
 public:
  LatentCode() = default;
  explicit LatentCode(Tensor data);

  const Tensor& tensor() const noexcept { return data_; }
  std::size_t layers() const { return data_.dim(0); }
  std::size_t dim() const { return data_.dim(1); }
  /// Layers [first, layers()), i.e. the codes consumed after feature injection.
  LatentCode tail(std::size_t first) const;

 private:
  Tensor data_;
};

/// Generator activation at the injection layer, channels x h x w.
class FeatureMap {
 public:
  FeatureMap() = default;
  explicit FeatureMap(Tensor data);

  const Tensor& tensor() const noexcept { return data_; }
  const Shape& shape() const noexcept { return data_.shape(); }

 private:
  Tensor data_;
};

enum class RestorationScenario { Criminal, Accomplice, BonaFide };

std::string_view to_string(RestorationScenario s);
RestorationScenario parse_scenario(std::string_view s);

enum class IdentityRole { Accomplice, Criminal, BonaFide };

std::string_view to_string(IdentityRole r);

/// Target identity X and, for morph scenarios, the non-target X-bar.
std::pair<IdentityRole, std::optional<IdentityRole>> target_and_nontarget(RestorationScenario s);

struct DocumentPair {
  ImageTensor doc;
  ImageTensor ref;
  std::optional<ImageTensor> gt;
  RestorationScenario scenario = RestorationScenario::BonaFide;
  std::string pair_id;
  std::optional<std::string> morph_method;
};

/// Checks the shape and range invariants; returns the pair unchanged.
/// With require_gt, a missing ground truth raises MissingGroundTruth.
const DocumentPair& validate_pair(const DocumentPair& pair, bool require_gt = false);

enum class ScoreLabel { BonaFide, Morph };

std::string_view to_string(ScoreLabel l);
ScoreLabel parse_label(std::string_view s);

struct ScoreRecord {
  std::string pair_id;
  ScoreLabel label = ScoreLabel::BonaFide;
  RestorationScenario scenario = RestorationScenario::BonaFide;
  double score = 0.0;
  std::string method;
  std::optional<std::string> morph_method;
  /// Similarity of the output to the ground truth target, when known.
  std::optional<double> score_gt;
};

/// Coefficients of one training pass plus the inverse-identity margin and
/// the R1 strength.
struct LossWeights {
  double lambda_id = 1.0;
  double lambda_l2 = 1.0;
  double lambda_lpips = 0.8;
  double lambda_ms_ssim = 0.4;
  double lambda_feat = 0.1;
  double lambda_inv_id = 0.6;
  double lambda_adv = 0.01;
  double margin_m = -0.5;
  double gamma_r1 = 10.0;

  static LossWeights morphed_pass() { return {}; }
  static LossWeights bona_fide_pass() {
    LossWeights w;
    w.lambda_id = 0.1;
    w.lambda_l2 = 0.1;
    w.lambda_lpips = 0.08;
    w.lambda_ms_ssim = 0.04;
    w.lambda_feat = 0.01;
    w.lambda_inv_id = 0.0;
    w.lambda_adv = 0.01;
    return w;
  }
  void validate() const;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

}  // namespace sfdm
