#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sfdm/core.hpp"

namespace sfdm {

/// Mean similarity to the target identity minus tau.
double dti(const std::vector<double>& similarities_to_gt, double tau);
/// Mean similarity to the non-target reference minus tau. Undefined for bona
/// fide documents.
double dnti(const std::vector<double>& similarities_to_nontarget, double tau,
            RestorationScenario scenario = RestorationScenario::Accomplice);

/// Morphs accepted as bona fide: fraction with s >= tau.
double macer(const std::vector<double>& morph_scores, double tau);
/// Bona fide samples rejected: fraction with s < tau.
double bscer(const std::vector<double>& bona_scores, double tau);

struct DetPoint {
  double tau;
  double macer;
  double bscer;
};

/// Sorted unique scores of both sets, bracketed by -inf and +inf.
std::vector<double> candidate_thresholds(const std::vector<double>& bona, const std::vector<double>& morph);
/// One point per candidate threshold, in increasing tau.
std::vector<DetPoint> det_curve(const std::vector<double>& bona, const std::vector<double>& morph);
/// Crossing of MACER and BSCER along the DET polyline.
double eer(const std::vector<double>& bona, const std::vector<double>& morph);
/// BSCER at the smallest candidate tau whose MACER does not exceed target.
double bscer_at_macer(const std::vector<double>& bona, const std::vector<double>& morph, double target_macer);
/// 1-Wasserstein distance between the two empirical score distributions.
double bms(const std::vector<double>& bona, const std::vector<double>& morph);

struct ScoreSet {
  std::vector<ScoreRecord> bona_fide;
  std::vector<ScoreRecord> morph;

  static ScoreSet partition(const std::vector<ScoreRecord>& records);
  std::vector<double> bona_scores() const;
  std::vector<double> morph_scores() const;
};

/// Ground-truth similarities of the morph records (empty entries skipped).
std::vector<double> build_dd(const std::vector<ScoreRecord>& records);

/// outcomes[morph][attempt][frs]: the morph verified against both
/// contributors on that attempt with that FRS.
using MapOutcomes = std::vector<std::vector<std::vector<bool>>>;

/// map[r-1][c-1] = fraction of morphs for which at least c FRSs verify both
/// contributors on at least r attempts.
std::vector<std::vector<double>> map_matrix(const MapOutcomes& outcomes, std::size_t max_r, std::size_t max_c);

}  // namespace sfdm
