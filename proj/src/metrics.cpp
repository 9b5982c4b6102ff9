#include "sfdm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sfdm/error.hpp"

namespace sfdm {

namespace {

void require_nonempty(const std::vector<double>& v, const char* what) {
  if (v.empty()) throw EmptyScoreSet(std::string(what) + ": empty score list");
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Number of entries of a sorted vector that are >= tau.
std::size_t count_at_or_above(const std::vector<double>& sorted, double tau) {
  return static_cast<std::size_t>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), tau));
}

std::vector<double> sorted_copy(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

double dti(const std::vector<double>& s, double tau) {
  require_nonempty(s, "dti");
  return mean(s) - tau;
}

double dnti(const std::vector<double>& s, double tau, RestorationScenario scenario) {
  if (scenario == RestorationScenario::BonaFide)
    throw ScenarioNotApplicable("DNTI is not defined for bona fide documents");
  require_nonempty(s, "dnti");
  return mean(s) - tau;
}

double macer(const std::vector<double>& morph, double tau) {
  require_nonempty(morph, "macer");
  const auto n = std::count_if(morph.begin(), morph.end(), [tau](double s) { return s >= tau; });
  return static_cast<double>(n) / static_cast<double>(morph.size());
}

double bscer(const std::vector<double>& bona, double tau) {
  require_nonempty(bona, "bscer");
  const auto n = std::count_if(bona.begin(), bona.end(), [tau](double s) { return s < tau; });
  return static_cast<double>(n) / static_cast<double>(bona.size());
}

std::vector<double> candidate_thresholds(const std::vector<double>& bona, const std::vector<double>& morph) {
  std::vector<double> c;
  c.reserve(bona.size() + morph.size() + 2);
  c.push_back(-std::numeric_limits<double>::infinity());
  c.insert(c.end(), bona.begin(), bona.end());
  c.insert(c.end(), morph.begin(), morph.end());
  c.push_back(std::numeric_limits<double>::infinity());
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

std::vector<DetPoint> det_curve(const std::vector<double>& bona, const std::vector<double>& morph) {
  require_nonempty(bona, "det_curve");
  require_nonempty(morph, "det_curve");
  const auto b = sorted_copy(bona), m = sorted_copy(morph);
  const double nb = static_cast<double>(b.size()), nm = static_cast<double>(m.size());
  std::vector<DetPoint> out;
  for (double tau : candidate_thresholds(bona, morph)) {
    const double ma = static_cast<double>(count_at_or_above(m, tau)) / nm;
    const double bs = static_cast<double>(b.size() - count_at_or_above(b, tau)) / nb;
    out.push_back({tau, ma, bs});
  }
  return out;
}

double eer(const std::vector<double>& bona, const std::vector<double>& morph) {
  const auto det = det_curve(bona, morph);
  // d = macer - bscer falls from 1 at -inf to -1 at +inf.
  for (std::size_t i = 0; i < det.size(); ++i) {
    const double d = det[i].macer - det[i].bscer;
    if (d == 0) return det[i].macer;
    if (i + 1 < det.size()) {
      const double dn = det[i + 1].macer - det[i + 1].bscer;
      if (d > 0 && dn < 0) {
        const double t = d / (d - dn);
        return det[i].macer + t * (det[i + 1].macer - det[i].macer);
      }
    }
  }
  return 0.5;
}

double bscer_at_macer(const std::vector<double>& bona, const std::vector<double>& morph, double target_macer) {
  if (!(target_macer > 0 && target_macer <= 1)) throw ConfigError("target MACER must lie in (0, 1]");
  for (const DetPoint& p : det_curve(bona, morph))
    if (p.macer <= target_macer) return p.bscer;
  return 1.0;
}

double bms(const std::vector<double>& bona, const std::vector<double>& morph) {
  require_nonempty(bona, "bms");
  require_nonempty(morph, "bms");
  const auto b = sorted_copy(bona), m = sorted_copy(morph);
  std::vector<double> xs(b);
  xs.insert(xs.end(), m.begin(), m.end());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  const double nb = static_cast<double>(b.size()), nm = static_cast<double>(m.size());
  double total = 0;
  std::size_t ib = 0, im = 0;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    while (ib < b.size() && b[ib] <= xs[i]) ++ib;
    while (im < m.size() && m[im] <= xs[i]) ++im;
    total += std::abs(static_cast<double>(ib) / nb - static_cast<double>(im) / nm) * (xs[i + 1] - xs[i]);
  }
  return total;
}

ScoreSet ScoreSet::partition(const std::vector<ScoreRecord>& records) {
  ScoreSet s;
  for (const auto& r : records) (r.label == ScoreLabel::BonaFide ? s.bona_fide : s.morph).push_back(r);
  return s;
}

std::vector<double> ScoreSet::bona_scores() const {
  std::vector<double> v;
  for (const auto& r : bona_fide) v.push_back(r.score);
  return v;
}

std::vector<double> ScoreSet::morph_scores() const {
  std::vector<double> v;
  for (const auto& r : morph) v.push_back(r.score);
  return v;
}

std::vector<double> build_dd(const std::vector<ScoreRecord>& records) {
  std::vector<double> v;
  for (const auto& r : records)
    if (r.label == ScoreLabel::Morph && r.score_gt) v.push_back(*r.score_gt);
  return v;
}

std::vector<std::vector<double>> map_matrix(const MapOutcomes& outcomes, std::size_t max_r, std::size_t max_c) {
  if (outcomes.empty()) throw EmptyScoreSet("map_matrix: no morphs");
  std::vector<std::vector<double>> map(max_r, std::vector<double>(max_c, 0.0));
  for (const auto& attempts : outcomes) {
    const std::size_t n_frs = attempts.empty() ? 0 : attempts.front().size();
    // verified[c] = number of attempts on which FRS c verified both contributors
    std::vector<std::size_t> verified(n_frs, 0);
    for (const auto& row : attempts) {
      if (row.size() != n_frs) throw ShapeMismatch("map_matrix: ragged outcome table");
      for (std::size_t c = 0; c < n_frs; ++c) verified[c] += row[c] ? 1 : 0;
    }
    for (std::size_t r = 1; r <= max_r; ++r) {
      const auto n_ok = static_cast<std::size_t>(
          std::count_if(verified.begin(), verified.end(), [r](std::size_t v) { return v >= r; }));
      for (std::size_t c = 1; c <= max_c; ++c)
        if (n_ok >= c) map[r - 1][c - 1] += 1.0;
    }
  }
  for (auto& row : map)
    for (double& v : row) v /= static_cast<double>(outcomes.size());
  return map;
}

}  // namespace sfdm
