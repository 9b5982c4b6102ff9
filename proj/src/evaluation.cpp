#include "sfdm/evaluation.hpp"

#include <atomic>
#include <cstdlib>
#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "sfdm/error.hpp"
#include "sfdm/io.hpp"

namespace sfdm {

TrainingSet make_training_set(const ToyCorpus& corpus, const std::string& split) {
  TrainingSet set;
  for (const auto& ci : corpus.identities)
    if (ci.split == split) set.bona_fide.push_back({ci.doc, ci.live});
  for (const auto& m : corpus.morphs) {
    if (!m.accepted || m.split != split) continue;
    const auto& a = corpus.identities[m.accomplice];
    const auto& c = corpus.identities[m.criminal];
    set.morphs.push_back({m.image, a.doc, c.doc, c.live});
  }
  return set;
}

EvalScenario parse_eval_scenario(std::string_view s) {
  if (s == "accomplice") return EvalScenario::Accomplice;
  if (s == "criminal") return EvalScenario::Criminal;
  if (s == "bonafide") return EvalScenario::BonaFide;
  if (s == "all") return EvalScenario::All;
  throw ConfigError("scenario must be accomplice, criminal, bonafide or all");
}

std::vector<EvalPair> evaluation_pairs(const ToyCorpus& corpus, EvalScenario scenario, const std::string& split) {
  std::vector<EvalPair> out;
  for (const auto& ci : corpus.identities) {
    if (ci.split != split) continue;
    for (std::size_t j = 0; j < ci.live.size(); ++j) {
      EvalPair p;
      p.pair = {ci.doc, ci.live[j], ci.doc, RestorationScenario::BonaFide,
                "bf_" + ci.identity.id + "_" + std::to_string(j), std::nullopt};
      p.label = ScoreLabel::BonaFide;
      out.push_back(std::move(p));
    }
  }
  std::vector<RestorationScenario> morph_scenarios;
  if (scenario == EvalScenario::Accomplice || scenario == EvalScenario::All)
    morph_scenarios.push_back(RestorationScenario::Accomplice);
  if (scenario == EvalScenario::Criminal || scenario == EvalScenario::All)
    morph_scenarios.push_back(RestorationScenario::Criminal);
  for (RestorationScenario sc : morph_scenarios)
    for (const auto& m : corpus.morphs) {
      if (!m.accepted || m.split != split) continue;
      const bool acc = sc == RestorationScenario::Accomplice;
      const auto& target = corpus.identities[acc ? m.accomplice : m.criminal];
      const auto& other = corpus.identities[acc ? m.criminal : m.accomplice];
      EvalPair p;
      p.pair = {m.image, other.live.front(), target.doc, sc, m.id + (acc ? ":A" : ":C"), m.method};
      p.label = ScoreLabel::Morph;
      out.push_back(std::move(p));
    }
  return out;
}

std::vector<EvalPair> corrupt_pairs(std::vector<EvalPair> pairs, CorruptionKind kind, int severity,
                                    std::uint64_t seed) {
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    pairs[i].pair.doc = corrupt(pairs[i].pair.doc, kind, severity, derive_seed(seed, {i, 0}));
    pairs[i].pair.ref = corrupt(pairs[i].pair.ref, kind, severity, derive_seed(seed, {i, 1}));
  }
  return pairs;
}

std::size_t worker_threads() {
  const char* env = std::getenv("SFDM_NUM_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("SFDM_NUM_THREADS must be a positive integer");
  return static_cast<std::size_t>(std::min<long>(v, 256));
}

namespace {

template <class Fn>
std::vector<ScoreRecord> parallel_score(const std::vector<EvalPair>& pairs, Fn fn) {
  std::vector<ScoreRecord> out(pairs.size());
  const std::size_t n_workers = std::min(worker_threads(), std::max<std::size_t>(1, pairs.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    try {
      for (std::size_t i = next++; i < pairs.size(); i = next++) out[i] = fn(pairs[i]);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mu);
      if (!failure) failure = std::current_exception();
      next = pairs.size();
    }
  };
  if (n_workers == 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_workers; ++t) threads.emplace_back(work);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace

std::vector<ScoreRecord> score_pairs(const std::vector<EvalPair>& pairs, const DemorpherModel& model,
                                     const Backends& backends, const std::string& method) {
  return parallel_score(pairs, [&](const EvalPair& p) { return dmad_score(p.pair, p.label, model, backends, method); });
}

std::vector<ScoreRecord> baseline_scores(const std::vector<EvalPair>& pairs, const FaceRecognizer& frs,
                                         const std::string& method) {
  return parallel_score(pairs, [&](const EvalPair& p) { return frs_baseline_score(p.pair, p.label, frs, method); });
}

std::vector<MetricRow> compute_metrics(const std::vector<ScoreRecord>& records, double tau,
                                       const std::string& dataset) {
  std::vector<std::string> methods;
  for (const auto& r : records)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  std::vector<MetricRow> rows;
  for (const std::string& method : methods) {
    std::vector<double> bona;
    for (const auto& r : records)
      if (r.method == method && r.label == ScoreLabel::BonaFide) bona.push_back(r.score);
    if (!bona.empty()) {
      rows.push_back({dataset, "bonafide", method, "DTI", dti(bona, tau)});
      rows.push_back({dataset, "bonafide", method, "BSCER@tau", bscer(bona, tau)});
    }
    for (RestorationScenario sc : {RestorationScenario::Accomplice, RestorationScenario::Criminal}) {
      std::vector<std::string> morph_methods = {""};
      std::set<std::string> seen;
      for (const auto& r : records)
        if (r.method == method && r.label == ScoreLabel::Morph && r.scenario == sc && r.morph_method &&
            seen.insert(*r.morph_method).second)
          morph_methods.push_back(*r.morph_method);
      for (const std::string& mm : morph_methods) {
        std::vector<double> s, s_gt;
        for (const auto& r : records) {
          if (r.method != method || r.label != ScoreLabel::Morph || r.scenario != sc) continue;
          if (!mm.empty() && r.morph_method != mm) continue;
          s.push_back(r.score);
          if (r.score_gt) s_gt.push_back(*r.score_gt);
        }
        if (s.empty()) continue;
        const std::string ds = mm.empty() ? dataset : dataset + ":" + mm;
        const std::string scn(to_string(sc));
        if (!s_gt.empty()) {
          rows.push_back({ds, scn, method, "DTI", dti(s_gt, tau)});
          rows.push_back({ds, scn, method, "DD_mean", dti(s_gt, 0.0)});
        }
        rows.push_back({ds, scn, method, "DNTI", dnti(s, tau, sc)});
        rows.push_back({ds, scn, method, "MACER@tau", macer(s, tau)});
        if (!bona.empty()) {
          rows.push_back({ds, scn, method, "BSCER@tau", bscer(bona, tau)});
          rows.push_back({ds, scn, method, "EER", eer(bona, s)});
          rows.push_back({ds, scn, method, "BSCER@MACER=0.1", bscer_at_macer(bona, s, 0.1)});
          rows.push_back({ds, scn, method, "BMS", bms(bona, s)});
        }
      }
    }
  }
  return rows;
}

std::optional<double> find_metric(const std::vector<MetricRow>& rows, const std::string& dataset,
                                  const std::string& scenario, const std::string& method, const std::string& metric) {
  for (const auto& r : rows)
    if (r.dataset == dataset && r.scenario == scenario && r.method == method && r.metric == metric) return r.value;
  return std::nullopt;
}

std::string scores_csv_header() { return "pair_id,label,scenario,morph_method,method,score,score_gt"; }

std::string format_scores_csv(const std::vector<ScoreRecord>& records) {
  std::string out = scores_csv_header() + "\n";
  for (const auto& r : records) {
    out += r.pair_id + "," + std::string(to_string(r.label)) + "," + std::string(to_string(r.scenario)) + "," +
           r.morph_method.value_or("") + "," + r.method + "," + io::format_double(r.score) + "," +
           (r.score_gt ? io::format_double(*r.score_gt) : "") + "\n";
  }
  return out;
}

std::vector<ScoreRecord> parse_scores_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || io::split_csv_line(line) != io::split_csv_line(scores_csv_header()))
    throw DecodeError("scores CSV header mismatch");
  std::vector<ScoreRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = io::split_csv_line(line);
    if (f.size() != 7) throw DecodeError("scores CSV line " + std::to_string(lineno) + ": expected 7 fields");
    try {
      ScoreRecord r;
      r.pair_id = f[0];
      r.label = parse_label(f[1]);
      r.scenario = parse_scenario(f[2]);
      if (!f[3].empty()) r.morph_method = f[3];
      r.method = f[4];
      r.score = std::stod(f[5]);
      if (!f[6].empty()) r.score_gt = std::stod(f[6]);
      if (!std::isfinite(r.score) || r.score < -1 || r.score > 1) throw DecodeError("score outside [-1, 1]");
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw DecodeError("scores CSV line " + std::to_string(lineno) + ": malformed number");
    } catch (const ConfigError& e) {
      throw DecodeError("scores CSV line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string format_metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "dataset,scenario,method,metric,value\n";
  for (const auto& r : rows)
    out += r.dataset + "," + r.scenario + "," + r.method + "," + r.metric + "," + io::format_double(r.value) + "\n";
  return out;
}

std::string format_det_csv(const std::vector<DetPoint>& points) {
  std::string out = "tau,macer,bscer\n";
  for (const auto& p : points)
    out += io::format_double(p.tau) + "," + io::format_double(p.macer) + "," + io::format_double(p.bscer) + "\n";
  return out;
}

MapOutcomes map_outcomes(const ToyCorpus& corpus, const std::vector<std::shared_ptr<const FaceRecognizer>>& frs,
                         const std::vector<double>& taus) {
  if (frs.size() != taus.size()) throw ConfigError("one threshold per recognizer expected");
  MapOutcomes out;
  for (const auto& m : corpus.morphs) {
    if (!m.accepted) continue;
    const auto& a = corpus.identities[m.accomplice];
    const auto& c = corpus.identities[m.criminal];
    const std::size_t attempts = std::min(a.live.size(), c.live.size());
    std::vector<std::vector<bool>> table(attempts, std::vector<bool>(frs.size()));
    for (std::size_t f = 0; f < frs.size(); ++f) {
      const Embedding e = frs[f]->embed(m.image);
      for (std::size_t r = 0; r < attempts; ++r)
        table[r][f] = similarity(e, frs[f]->embed(a.live[r])) >= taus[f] &&
                      similarity(e, frs[f]->embed(c.live[r])) >= taus[f];
    }
    out.push_back(std::move(table));
  }
  return out;
}

}  // namespace sfdm
