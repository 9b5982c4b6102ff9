#include "sfdm/core.hpp"

#include <cmath>

namespace sfdm {

namespace {

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NonFiniteValue(std::string(what) + " contains non-finite values");
}

void require_rank(const Tensor& t, std::size_t r, const char* what) {
  if (t.rank() != r) {
    throw ShapeMismatch(std::string(what) + " must have rank " + std::to_string(r) + ", got " + shape_str(t.shape()));
  }
}

}  // namespace

ImageTensor::ImageTensor(Tensor data) : data_(std::move(data)) {
  require_rank(data_, 3, "ImageTensor");
  require_finite(data_, "ImageTensor");
}

bool ImageTensor::in_range() const {
  for (double v : data_.data())
    if (v < -1.0 || v > 1.0) return false;
  return true;
}

LatentCode::LatentCode(Tensor data) : data_(std::move(data)) {
  require_rank(data_, 2, "LatentCode");
  require_finite(data_, "LatentCode");
}

LatentCode LatentCode::tail(std::size_t first) const {
  if (first > layers()) throw ShapeMismatch("latent tail start beyond layer count");
  const std::size_t d = dim();
  std::vector<double> v(data_.vec().begin() + static_cast<std::ptrdiff_t>(first * d), data_.vec().end());
  return LatentCode(Tensor({layers() - first, d}, std::move(v)));
}

FeatureMap::FeatureMap(Tensor data) : data_(std::move(data)) {
  require_rank(data_, 3, "FeatureMap");
  require_finite(data_, "FeatureMap");
}

std::string_view to_string(RestorationScenario s) {
  switch (s) {
    case RestorationScenario::Criminal: return "criminal";
    case RestorationScenario::Accomplice: return "accomplice";
    case RestorationScenario::BonaFide: return "bonafide";
  }
  return "bonafide";
}

RestorationScenario parse_scenario(std::string_view s) {
  if (s == "criminal") return RestorationScenario::Criminal;
  if (s == "accomplice") return RestorationScenario::Accomplice;
  if (s == "bonafide") return RestorationScenario::BonaFide;
  throw ConfigError("unknown scenario '" + std::string(s) + "'");
}

std::string_view to_string(IdentityRole r) {
  switch (r) {
    case IdentityRole::Accomplice: return "A";
    case IdentityRole::Criminal: return "C";
    case IdentityRole::BonaFide: return "B";
  }
  return "B";
}

std::pair<IdentityRole, std::optional<IdentityRole>> target_and_nontarget(RestorationScenario s) {
  switch (s) {
    case RestorationScenario::Accomplice: return {IdentityRole::Accomplice, IdentityRole::Criminal};
    case RestorationScenario::Criminal: return {IdentityRole::Criminal, IdentityRole::Accomplice};
    case RestorationScenario::BonaFide: return {IdentityRole::BonaFide, std::nullopt};
  }
  return {IdentityRole::BonaFide, std::nullopt};
}

const DocumentPair& validate_pair(const DocumentPair& pair, bool require_gt) {
  if (pair.doc.shape() != pair.ref.shape()) {
    throw ShapeMismatch("pair " + pair.pair_id + ": doc " + shape_str(pair.doc.shape()) + " vs ref " +
                        shape_str(pair.ref.shape()));
  }
  if (pair.gt && pair.gt->shape() != pair.doc.shape()) {
    throw ShapeMismatch("pair " + pair.pair_id + ": gt " + shape_str(pair.gt->shape()) + " vs doc " +
                        shape_str(pair.doc.shape()));
  }
  if (require_gt && !pair.gt) throw MissingGroundTruth("pair " + pair.pair_id + " has no ground truth");
  if (!pair.doc.in_range() || !pair.ref.in_range() || (pair.gt && !pair.gt->in_range())) {
    throw RangeError("pair " + pair.pair_id + ": pixel values outside [-1, 1]");
  }
  return pair;
}

std::string_view to_string(ScoreLabel l) { return l == ScoreLabel::BonaFide ? "bona_fide" : "morph"; }

ScoreLabel parse_label(std::string_view s) {
  if (s == "bona_fide") return ScoreLabel::BonaFide;
  if (s == "morph") return ScoreLabel::Morph;
  throw ConfigError("unknown score label '" + std::string(s) + "'");
}

void LossWeights::validate() const {
  for (double v : {lambda_id, lambda_l2, lambda_lpips, lambda_ms_ssim, lambda_feat, lambda_inv_id, lambda_adv, gamma_r1}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss coefficients must be finite and nonnegative");
  }
  if (!(margin_m >= -1.0 && margin_m <= 1.0)) throw ConfigError("margin m must lie in [-1, 1]");
}

}  // namespace sfdm
