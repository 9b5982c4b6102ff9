#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sfdm/dmad.hpp"
#include "sfdm/metrics.hpp"
#include "sfdm/toyworld.hpp"
#include "sfdm/training.hpp"

namespace sfdm {

/// Training view of a corpus split: every identity as a bona fide source and
/// every accepted morph as an accomplice-restoration sample.
TrainingSet make_training_set(const ToyCorpus& corpus, const std::string& split = "train");

struct EvalPair {
  DocumentPair pair;
  ScoreLabel label = ScoreLabel::BonaFide;
};

enum class EvalScenario { Accomplice, Criminal, BonaFide, All };
EvalScenario parse_eval_scenario(std::string_view s);

/// Bona fide pairs (document against each live capture) plus, for morph
/// scenarios, each accepted morph against the first live capture of the
/// contributor that is not the target.
std::vector<EvalPair> evaluation_pairs(const ToyCorpus& corpus, EvalScenario scenario,
                                       const std::string& split = "test");

/// Applies the corruption to document and reference images.
std::vector<EvalPair> corrupt_pairs(std::vector<EvalPair> pairs, CorruptionKind kind, int severity,
                                    std::uint64_t seed);

/// Worker count from SFDM_NUM_THREADS (default 1).
std::size_t worker_threads();

/// Demorphing-based scores ("sfd"), computed in parallel over pairs; the
/// output order follows the input.
std::vector<ScoreRecord> score_pairs(const std::vector<EvalPair>& pairs, const DemorpherModel& model,
                                     const Backends& backends, const std::string& method = "sfd");
/// The raw-FRS baseline: the document stands in for the demorphed output.
std::vector<ScoreRecord> baseline_scores(const std::vector<EvalPair>& pairs, const FaceRecognizer& frs,
                                         const std::string& method = "frs_baseline");

struct MetricRow {
  std::string dataset;
  std::string scenario;
  std::string method;
  std::string metric;
  double value = 0.0;
};

/// Per detector method and scenario: DTI, DNTI, MACER@tau, BSCER@tau, EER,
/// BMS, BSCER@MACER=0.1 and the mean of D_D, pooled over morph methods
/// (dataset) and per morph method (dataset:method). Bona fide pairs give
/// DTI and BSCER@tau under the bonafide scenario.
std::vector<MetricRow> compute_metrics(const std::vector<ScoreRecord>& records, double tau,
                                       const std::string& dataset);
std::optional<double> find_metric(const std::vector<MetricRow>& rows, const std::string& dataset,
                                  const std::string& scenario, const std::string& method, const std::string& metric);

std::string scores_csv_header();
std::string format_scores_csv(const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> parse_scores_csv(const std::string& text);
std::string format_metrics_csv(const std::vector<MetricRow>& rows);
std::string format_det_csv(const std::vector<DetPoint>& points);

/// Per morph, attempt (live capture index) and recognizer: whether the
/// morph verifies against both contributors at that recognizer's threshold.
MapOutcomes map_outcomes(const ToyCorpus& corpus, const std::vector<std::shared_ptr<const FaceRecognizer>>& frs,
                         const std::vector<double>& taus);

}  // namespace sfdm
