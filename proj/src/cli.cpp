#include "sfdm/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#include "sfdm/error.hpp"
#include "sfdm/evaluation.hpp"
#include "sfdm/io.hpp"
#include "sfdm/plot.hpp"

namespace fs = std::filesystem;

namespace sfdm::cli {

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig load_config(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig::toy() : RunConfig::load(g.config);
  if (g.seed) {
    cfg.corpus.seed = *g.seed;
    cfg.train.seed = *g.seed;
  }
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(g.out);
  return g.out;
}

fs::path out_file(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  const fs::path p(g.out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

ToyCorpus load_corpus(const std::string& dir, const RunConfig& cfg) {
  ToyCorpus corpus = ToyCorpus::load(dir);
  if (!(corpus.backend == cfg.backend)) throw ConfigError("corpus was built with different backend settings");
  return corpus;
}

std::string checkpoint_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%04zu.ckpt", step);
  return buf;
}

// ---- gen-corpus

int gen_corpus(const Globals& g, std::ostream& out) {
  const RunConfig cfg = load_config(g);
  const fs::path dir = out_dir(g);
  const ToyCorpus corpus = build_corpus(cfg.corpus, make_toy_backends(cfg.backend));
  corpus.save(dir);
  std::size_t accepted = 0;
  for (const auto& m : corpus.morphs) accepted += m.accepted;
  out << "identities " << corpus.identities.size() << ", morphs " << corpus.morphs.size() << " (" << accepted
      << " accepted), tau " << io::format_double(corpus.calibration.tau) << "\n"
      << "manifest digest " << corpus.digest() << "\n";
  return kOk;
}

// ---- train

struct TrainArgs {
  std::string corpus;
  std::string resume;
};

int train(const Globals& g, const TrainArgs& a, std::ostream& out) {
  const RunConfig cfg = load_config(g);
  const ToyCorpus corpus = load_corpus(a.corpus, cfg);
  const fs::path dir = out_dir(g);
  const TrainingSet set = make_training_set(corpus);
  Trainer trainer(cfg, make_toy_backends(cfg.backend), corpus.digest());

  const fs::path log_path = dir / "train_log.csv";
  std::string log = log_header() + "\n";
  if (!a.resume.empty()) {
    trainer.load_checkpoint(a.resume);
    // Keep the rows of completed steps only; later rows are re-run.
    if (fs::exists(log_path)) {
      std::istringstream is(io::read_file(log_path));
      std::string line;
      std::getline(is, line);
      if (line != log_header()) throw DecodeError("existing training log has a different header");
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (std::stoull(line.substr(0, line.find(','))) >= trainer.step()) break;
        log += line + "\n";
      }
    }
  }
  const std::size_t every = cfg.train.checkpoint_every;
  trainer.run(set, cfg.train.total_steps, [&](const LogRow& row) {
    log += format_log_row(row) + "\n";
    const std::size_t done = row.step + 1;
    if (every != 0 && done % every == 0 && done != cfg.train.total_steps) {
      trainer.save_checkpoint(dir / checkpoint_name(done));
      io::write_file_atomic(log_path, log);
    }
  });
  trainer.save_checkpoint(dir / "final.ckpt");
  io::write_file_atomic(log_path, log);
  out << "trained to step " << trainer.step() << "\n";
  return kOk;
}

// ---- evaluate

struct EvalArgs {
  std::string checkpoint;
  std::string corpus;
  std::string scenario = "all";
  std::string corruption;
  std::string threshold;
};

int evaluate(const Globals& g, const EvalArgs& a, std::ostream& out) {
  const RunConfig cfg = load_config(g);
  const EvalScenario scenario = parse_eval_scenario(a.scenario);
  const ToyCorpus corpus = load_corpus(a.corpus, cfg);
  const Backends backends = make_toy_backends(cfg.backend);
  const auto model = load_model(a.checkpoint, cfg);
  const double tau = a.threshold.empty() ? corpus.calibration.tau : read_threshold(a.threshold).tau;

  std::vector<EvalPair> pairs = evaluation_pairs(corpus, scenario);
  if (!a.corruption.empty()) {
    const auto colon = a.corruption.find(':');
    if (colon == std::string::npos) throw ConfigError("--corruption expects kind:severity");
    int severity = 0;
    try {
      severity = std::stoi(a.corruption.substr(colon + 1));
    } catch (const std::logic_error&) {
      throw ConfigError("corruption severity must be an integer");
    }
    pairs = corrupt_pairs(std::move(pairs), parse_corruption(a.corruption.substr(0, colon)), severity,
                          derive_seed(cfg.corpus.seed, {0xc0de}));
  }

  std::vector<ScoreRecord> records = score_pairs(pairs, *model, backends);
  const auto base = baseline_scores(pairs, *backends.frs);
  records.insert(records.end(), base.begin(), base.end());
  const auto rows = compute_metrics(records, tau, cfg.eval.dataset);

  const fs::path dir = out_dir(g);
  io::write_file_atomic(dir / "scores.csv", format_scores_csv(records));
  io::write_file_atomic(dir / "metrics.csv", format_metrics_csv(rows));
  for (const std::string method : {"sfd", "frs_baseline"}) {
    std::vector<double> bona;
    for (const auto& r : records)
      if (r.method == method && r.label == ScoreLabel::BonaFide) bona.push_back(r.score);
    for (RestorationScenario sc : {RestorationScenario::Accomplice, RestorationScenario::Criminal}) {
      std::vector<double> morph;
      for (const auto& r : records)
        if (r.method == method && r.label == ScoreLabel::Morph && r.scenario == sc) morph.push_back(r.score);
      if (bona.empty() || morph.empty()) continue;
      io::write_file_atomic(dir / ("det_" + std::string(to_string(sc)) + "_" + method + ".csv"),
                            format_det_csv(det_curve(bona, morph)));
    }
  }
  out << records.size() << " scores, " << rows.size() << " metric rows, tau " << io::format_double(tau) << "\n";
  return kOk;
}

// ---- calibrate

struct CalibrateArgs {
  std::string corpus;
  std::string scores;
  std::optional<double> target_fmr;
  std::size_t frs = 0;
};

int calibrate(const Globals& g, const CalibrateArgs& a, std::ostream& out) {
  const RunConfig cfg = load_config(g);
  if (a.corpus.empty() == a.scores.empty()) throw ConfigError("give exactly one of --corpus or --scores");
  const double target = a.target_fmr.value_or(cfg.corpus.target_fmr);
  std::vector<double> mated, nonmated;
  std::string frs_name;
  if (!a.corpus.empty()) {
    const ToyCorpus corpus = load_corpus(a.corpus, cfg);
    const auto frs = make_toy_frs(cfg.backend, a.frs);
    std::tie(mated, nonmated) = mated_nonmated_scores(corpus.identities, *frs);
    frs_name = frs->name();
  } else {
    // Bona fide rows are mated comparisons, morph rows non-mated ones.
    for (const auto& r : parse_scores_csv(io::read_file(a.scores)))
      (r.label == ScoreLabel::BonaFide ? mated : nonmated).push_back(r.score);
  }
  const Threshold t = calibrate_threshold(mated, nonmated, target, frs_name);
  write_threshold(out_file(g), t);
  out << "tau " << io::format_double(t.tau) << " (FMR " << io::format_double(t.achieved_fmr) << ", TMR "
      << io::format_double(t.achieved_tmr) << ")\n";
  return kOk;
}

// ---- map

struct MapArgs {
  std::string corpus;
  std::string outcomes;
  std::string frs = "0";
  std::size_t max_r = 1;
  std::string save_outcomes;
};

std::vector<std::size_t> parse_index_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw ConfigError("--frs expects comma-separated recognizer indices");
    }
  }
  if (out.empty()) throw ConfigError("--frs lists no recognizer");
  return out;
}

int map_cmd(const Globals& g, const MapArgs& a, std::ostream& out) {
  const RunConfig cfg = load_config(g);
  if (a.corpus.empty() == a.outcomes.empty()) throw ConfigError("give exactly one of --corpus or --outcomes");
  if (a.max_r == 0) throw ConfigError("--max-r must be at least 1");
  MapOutcomes outcomes;
  std::size_t n_frs = 0;
  if (!a.corpus.empty()) {
    const ToyCorpus corpus = load_corpus(a.corpus, cfg);
    std::vector<std::shared_ptr<const FaceRecognizer>> frs;
    std::vector<double> taus;
    for (std::size_t i : parse_index_list(a.frs)) {
      frs.push_back(make_toy_frs(cfg.backend, i));
      const auto [mated, nonmated] = mated_nonmated_scores(corpus.identities, *frs.back());
      taus.push_back(calibrate_threshold(mated, nonmated, cfg.corpus.target_fmr).tau);
    }
    outcomes = map_outcomes(corpus, frs, taus);
    n_frs = frs.size();
    if (!a.save_outcomes.empty()) io::write_file_atomic(a.save_outcomes, format_outcomes_csv(outcomes));
  } else {
    outcomes = parse_outcomes_csv(io::read_file(a.outcomes));
    for (const auto& m : outcomes)
      if (!m.empty()) n_frs = std::max(n_frs, m.front().size());
  }
  if (outcomes.empty()) throw EmptyScoreSet("no morph outcomes to tabulate");
  io::write_file_atomic(out_file(g), format_map_csv(map_matrix(outcomes, a.max_r, n_frs)));
  out << outcomes.size() << " morphs, " << n_frs << " recognizers\n";
  return kOk;
}

// ---- plot

struct PlotArgs {
  std::string scores;
  std::string kind;
  std::string method = "sfd";
  std::string scenario = "accomplice";
  std::optional<double> tau;
  std::string threshold;
};

int plot_cmd(const Globals& g, const PlotArgs& a, std::ostream& out) {
  const auto records = parse_scores_csv(io::read_file(a.scores));
  const RestorationScenario sc = parse_scenario(a.scenario);
  std::vector<double> bona, morph, gt;
  for (const auto& r : records) {
    if (r.method != a.method) continue;
    if (r.label == ScoreLabel::BonaFide) {
      bona.push_back(r.score);
    } else if (r.scenario == sc) {
      morph.push_back(r.score);
      if (r.score_gt) gt.push_back(*r.score_gt);
    }
  }
  std::string svg;
  const std::string title = a.method + ", " + a.scenario;
  if (a.kind == "det") {
    if (bona.empty() || morph.empty()) throw EmptyScoreSet("DET needs bona fide and morph scores");
    svg = plot::det_svg(det_curve(bona, morph), "DET: " + title);
  } else if (a.kind == "histogram") {
    double tau = std::numeric_limits<double>::quiet_NaN();
    if (a.tau) tau = *a.tau;
    else if (!a.threshold.empty()) tau = read_threshold(a.threshold).tau;
    else throw ConfigError("histogram needs --tau or --threshold");
    if (bona.empty() && morph.empty()) throw EmptyScoreSet("no scores for this method and scenario");
    svg = plot::histogram_svg({{"D_B", bona}, {"D_M", morph}, {"D_D", gt}}, tau, "Scores: " + title);
  } else {
    throw ConfigError("--kind must be det or histogram");
  }
  io::write_file_atomic(out_file(g), svg);
  out << "wrote " << g.out << "\n";
  return kOk;
}

}  // namespace

std::string format_outcomes_csv(const MapOutcomes& outcomes) {
  std::string s = "morph,attempt,frs,verified\n";
  for (std::size_t m = 0; m < outcomes.size(); ++m)
    for (std::size_t r = 0; r < outcomes[m].size(); ++r)
      for (std::size_t f = 0; f < outcomes[m][r].size(); ++f)
        s += std::to_string(m) + "," + std::to_string(r) + "," + std::to_string(f) + "," +
             (outcomes[m][r][f] ? "1" : "0") + "\n";
  return s;
}

MapOutcomes parse_outcomes_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || io::split_csv_line(line) != std::vector<std::string>{"morph", "attempt", "frs", "verified"})
    throw DecodeError("outcomes CSV header mismatch");
  MapOutcomes out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = io::split_csv_line(line);
    if (f.size() != 4 || (f[3] != "0" && f[3] != "1")) throw DecodeError("malformed outcomes row: " + line);
    std::size_t m = 0, r = 0, k = 0;
    try {
      m = std::stoul(f[0]);
      r = std::stoul(f[1]);
      k = std::stoul(f[2]);
    } catch (const std::logic_error&) {
      throw DecodeError("malformed outcomes row: " + line);
    }
    if (m >= out.size()) out.resize(m + 1);
    if (r >= out[m].size()) out[m].resize(r + 1);
    if (k >= out[m][r].size()) out[m][r].resize(k + 1, false);
    out[m][r][k] = f[3] == "1";
  }
  // Every morph needs the same recognizer count on every attempt.
  std::size_t n_frs = 0;
  for (const auto& m : out)
    for (const auto& r : m) n_frs = std::max(n_frs, r.size());
  for (const auto& m : out) {
    if (m.empty()) throw DecodeError("outcomes CSV skips a morph index");
    for (const auto& r : m)
      if (r.size() != n_frs) throw DecodeError("outcomes CSV has a ragged recognizer table");
  }
  return out;
}

std::string format_map_csv(const std::vector<std::vector<double>>& map) {
  std::string s = "r,c,value\n";
  for (std::size_t r = 0; r < map.size(); ++r)
    for (std::size_t c = 0; c < map[r].size(); ++c)
      s += std::to_string(r + 1) + "," + std::to_string(c + 1) + "," + io::format_double(map[r][c]) + "\n";
  return s;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Style-feature face demorphing toolkit"};
  app.name("sfdm");
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Run configuration file (key = value lines)");
  app.add_option("--seed", g.seed, "Overrides corpus.seed and train.seed");
  app.add_option("--out", g.out, "Output directory or file");

  auto* gen = app.add_subcommand("gen-corpus", "Build the toy corpus and write its manifest and images");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Dual-pass training on a corpus");
  tr->add_option("--corpus", ta.corpus, "Corpus directory")->required();
  tr->add_option("--resume", ta.resume, "Checkpoint to resume from");

  EvalArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Score a corpus split and compute D-MAD metrics");
  ev->add_option("--checkpoint", ea.checkpoint, "Trained checkpoint")->required();
  ev->add_option("--corpus", ea.corpus, "Corpus directory")->required();
  ev->add_option("--scenario", ea.scenario, "accomplice, criminal, bonafide or all");
  ev->add_option("--corruption", ea.corruption, "kind:severity, e.g. gaussian_noise:2");
  ev->add_option("--threshold", ea.threshold, "Threshold sidecar overriding the corpus tau");

  CalibrateArgs ca;
  auto* cal = app.add_subcommand("calibrate", "Calibrate the FRS threshold at a target FMR");
  cal->add_option("--corpus", ca.corpus, "Corpus directory (mated/non-mated FRS comparisons)");
  cal->add_option("--scores", ca.scores, "Scores CSV (bona fide rows mated, morph rows non-mated)");
  cal->add_option("--target-fmr", ca.target_fmr, "Target false match rate");
  cal->add_option("--frs", ca.frs, "Toy recognizer index");

  MapArgs ma;
  auto* mp = app.add_subcommand("map", "Morphing attack potential table");
  mp->add_option("--corpus", ma.corpus, "Corpus directory");
  mp->add_option("--outcomes", ma.outcomes, "Precomputed outcomes CSV");
  mp->add_option("--frs", ma.frs, "Comma-separated toy recognizer indices");
  mp->add_option("--max-r", ma.max_r, "Largest attempt count r");
  mp->add_option("--save-outcomes", ma.save_outcomes, "Also write the outcomes CSV here");

  PlotArgs pa;
  auto* pl = app.add_subcommand("plot", "DET curve or score histogram as SVG");
  pl->add_option("--scores", pa.scores, "Scores CSV")->required();
  pl->add_option("--kind", pa.kind, "det or histogram")->required();
  pl->add_option("--method", pa.method, "Detector method column value");
  pl->add_option("--scenario", pa.scenario, "accomplice or criminal");
  pl->add_option("--tau", pa.tau, "Decision threshold marker");
  pl->add_option("--threshold", pa.threshold, "Threshold sidecar for the marker");

  std::vector<std::string> argv_store{"sfdm"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return gen_corpus(g, out);
    if (*tr) return train(g, ta, out);
    if (*ev) return evaluate(g, ea, out);
    if (*cal) return calibrate(g, ca, out);
    if (*mp) return map_cmd(g, ma, out);
    if (*pl) return plot_cmd(g, pa, out);
  } catch (const StateMismatch& e) {
    err << "state mismatch: " << e.what() << "\n";
    return kStateMismatch;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const DecodeError& e) {
    err << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace sfdm::cli
