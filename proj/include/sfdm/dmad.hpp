#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sfdm/backends.hpp"
#include "sfdm/core.hpp"
#include "sfdm/demorpher.hpp"

namespace sfdm {

/// FRS decision threshold and the calibration run that produced it.
struct Threshold {
  double tau = 0.0;
  std::string frs;
  double target_fmr = 0.0;
  std::size_t mated_n = 0;
  std::size_t nonmated_n = 0;
  double achieved_tmr = 0.0;
  double achieved_fmr = 0.0;
};

/// BonaFide iff s >= tau.
ScoreLabel classify(double s, double tau) noexcept;

/// Fraction of scores with s >= tau.
double fraction_at_or_above(const std::vector<double>& scores, double tau);

/// Lowest candidate tau (unique non-mated scores plus one just above the
/// maximum) whose false match rate is at most target_fmr.
Threshold calibrate_threshold(const std::vector<double>& mated, const std::vector<double>& nonmated,
                              double target_fmr, const std::string& frs = "");

/// Sidecar CSV: tau,target_fmr,mated_n,nonmated_n,achieved_tmr,achieved_fmr.
void write_threshold(const std::filesystem::path& path, const Threshold& t);
Threshold read_threshold(const std::filesystem::path& path);

/// s = S(embed(ref), embed(demorph(pair))). When the pair carries ground
/// truth and is a morph, score_gt holds S(embed(gt), embed(output)).
ScoreRecord dmad_score(const DocumentPair& pair, ScoreLabel label, const DemorpherModel& model,
                       const Backends& backends, const std::string& method = "sfd");

/// The same record with demorphing skipped: the document itself is compared.
ScoreRecord frs_baseline_score(const DocumentPair& pair, ScoreLabel label, const FaceRecognizer& frs,
                               const std::string& method = "frs_baseline");

}  // namespace sfdm
