#include "sfdm/dmad.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "sfdm/error.hpp"
#include "sfdm/io.hpp"

namespace sfdm {

ScoreLabel classify(double s, double tau) noexcept { return s >= tau ? ScoreLabel::BonaFide : ScoreLabel::Morph; }

double fraction_at_or_above(const std::vector<double>& scores, double tau) {
  if (scores.empty()) throw EmptyScoreSet("empty score list");
  const auto n = std::count_if(scores.begin(), scores.end(), [tau](double s) { return s >= tau; });
  return static_cast<double>(n) / static_cast<double>(scores.size());
}

Threshold calibrate_threshold(const std::vector<double>& mated, const std::vector<double>& nonmated,
                              double target_fmr, const std::string& frs) {
  if (mated.empty() || nonmated.empty()) throw EmptyScoreSet("calibration needs mated and non-mated scores");
  if (!(target_fmr > 0 && target_fmr < 1)) throw ConfigError("target_fmr must lie in (0, 1)");
  std::vector<double> cand = nonmated;
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  cand.push_back(std::nextafter(cand.back(), std::numeric_limits<double>::infinity()));
  // FMR is non-increasing in tau, so the first candidate meeting the target is the lowest.
  double tau = cand.back();
  for (double c : cand)
    if (fraction_at_or_above(nonmated, c) <= target_fmr) {
      tau = c;
      break;
    }
  Threshold t;
  t.tau = tau;
  t.frs = frs;
  t.target_fmr = target_fmr;
  t.mated_n = mated.size();
  t.nonmated_n = nonmated.size();
  t.achieved_tmr = fraction_at_or_above(mated, tau);
  t.achieved_fmr = fraction_at_or_above(nonmated, tau);
  return t;
}

void write_threshold(const std::filesystem::path& path, const Threshold& t) {
  io::write_file_atomic(path, "tau,target_fmr,mated_n,nonmated_n,achieved_tmr,achieved_fmr\n" +
                                  io::format_double(t.tau) + ',' + io::format_double(t.target_fmr) + ',' +
                                  std::to_string(t.mated_n) + ',' + std::to_string(t.nonmated_n) + ',' +
                                  io::format_double(t.achieved_tmr) + ',' + io::format_double(t.achieved_fmr) + '\n');
}

Threshold read_threshold(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  if (header.rfind("tau,target_fmr,mated_n,nonmated_n,achieved_tmr", 0) != 0)
    throw DecodeError("not a threshold sidecar: " + path.string());
  std::vector<std::string> f;
  std::stringstream ss(row);
  for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
  if (f.size() < 5) throw DecodeError("malformed threshold row in " + path.string());
  try {
    Threshold t;
    t.tau = std::stod(f[0]);
    t.target_fmr = std::stod(f[1]);
    t.mated_n = std::stoull(f[2]);
    t.nonmated_n = std::stoull(f[3]);
    t.achieved_tmr = std::stod(f[4]);
    if (f.size() > 5) t.achieved_fmr = std::stod(f[5]);
    return t;
  } catch (const std::logic_error&) {
    throw DecodeError("malformed threshold row in " + path.string());
  }
}

ScoreRecord dmad_score(const DocumentPair& pair, ScoreLabel label, const DemorpherModel& model,
                       const Backends& backends, const std::string& method) {
  const DemorphResult r = demorph(pair, model, backends);
  const Embedding out = backends.frs->embed(r.image);
  ScoreRecord rec;
  rec.pair_id = pair.pair_id;
  rec.label = label;
  rec.scenario = pair.scenario;
  rec.method = method;
  rec.morph_method = pair.morph_method;
  rec.score = similarity(backends.frs->embed(pair.ref), out);
  if (pair.gt && label == ScoreLabel::Morph) rec.score_gt = similarity(backends.frs->embed(*pair.gt), out);
  return rec;
}

ScoreRecord frs_baseline_score(const DocumentPair& pair, ScoreLabel label, const FaceRecognizer& frs,
                               const std::string& method) {
  validate_pair(pair);
  const Embedding out = frs.embed(pair.doc);
  ScoreRecord rec;
  rec.pair_id = pair.pair_id;
  rec.label = label;
  rec.scenario = pair.scenario;
  rec.method = method;
  rec.morph_method = pair.morph_method;
  rec.score = similarity(frs.embed(pair.ref), out);
  if (pair.gt && label == ScoreLabel::Morph) rec.score_gt = similarity(frs.embed(*pair.gt), out);
  return rec;
}

}  // namespace sfdm
