#include "sfdm/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace sfdm {

BackendConfig BackendConfig::reference() {
  BackendConfig c;
  c.image_size = 256;
  c.latent_layers = 18;
  c.latent_dim = 512;
  c.feat_channels = 512;
  c.feat_h = 64;
  c.feat_w = 64;
  c.injection_layer_k = 9;
  c.frs_dim = 512;
  c.disc_hidden = 512;
  return c;
}

void BackendConfig::validate() const {
  if (image_size == 0 || latent_layers == 0 || latent_dim == 0 || feat_channels == 0 || feat_h == 0 || feat_w == 0 ||
      frs_dim == 0 || disc_hidden == 0) {
    throw ConfigError("backend dimensions must be positive");
  }
  if (injection_layer_k >= latent_layers) throw ConfigError("backend.injection_layer_k must be < backend.latent_layers");
  if (feat_h != feat_w) throw ConfigError("backend feature maps must be square");
  if (image_size % feat_h != 0) throw ConfigError("backend.image_size must be a multiple of backend.feat_h");
  const std::size_t ratio = image_size / feat_h;
  if ((ratio & (ratio - 1)) != 0) throw ConfigError("image_size / feat_h must be a power of two");
}

TrainConfig TrainConfig::reference() {
  TrainConfig c;
  c.total_steps = 68000;
  c.batch_size = 2;
  c.lr_modules = 5e-5;
  c.lr_disc = 1e-4;
  c.curriculum_cap_step = 40000;
  c.curriculum_p_max = 0.8;
  c.checkpoint_every = 5000;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(lr_modules > 0) || !(lr_disc > 0)) throw ConfigError("learning rates must be positive");
  if (!(curriculum_p_max >= 0 && curriculum_p_max <= 1)) throw ConfigError("train.curriculum_p_max must be in [0, 1]");
  if (checkpoint_every == 0) throw ConfigError("train.checkpoint_every must be positive");
  if (optimizer != "ranger" && optimizer != "adam") throw ConfigError("train.optimizer must be ranger or adam");
}

void CorpusConfig::validate() const {
  if (id_dim == 0 || live_per_identity == 0) throw ConfigError("corpus dimensions must be positive");
  if (!(alpha > 0 && alpha <= 1)) throw ConfigError("corpus.alpha must be in (0, 1]");
  if (!(target_fmr > 0 && target_fmr < 1)) throw ConfigError("corpus.target_fmr must be in (0, 1)");
  if (!(test_fraction >= 0 && test_fraction < 1)) throw ConfigError("corpus.test_fraction must be in [0, 1)");
  if (!(splice_area > 0 && splice_area <= 1)) throw ConfigError("corpus.splice_area must be in (0, 1]");
  if (lookalike_pool < lookalike_per_identity) throw ConfigError("corpus.lookalike_pool smaller than per-identity count");
  for (const auto& m : methods)
    if (m != "blend" && m != "splice") throw ConfigError("unknown morph method '" + m + "'");
  if (methods.empty()) throw ConfigError("corpus.methods must not be empty");
}

RunConfig RunConfig::reference() {
  RunConfig c;
  c.backend = BackendConfig::reference();
  c.train = TrainConfig::reference();
  c.loss.ms_ssim = MsSsimConfig::reference();
  c.model.idm_channels = 512;
  return c;
}

void RunConfig::validate() const {
  backend.validate();
  train.validate();
  corpus.validate();
  loss.bona_fide.validate();
  loss.morphed.validate();
  if (loss.bona_fide.lambda_inv_id != 0.0) throw ConfigError("lambda_inv_id must be 0 in the bona fide pass");
  if (loss.ms_ssim.scales == 0 || loss.ms_ssim.window == 0 || !(loss.ms_ssim.sigma > 0)) {
    throw ConfigError("invalid ms_ssim settings");
  }
  if (model.fdm_blocks < 2 || model.ffm_blocks < 1) throw ConfigError("model.fdm_blocks >= 2 and model.ffm_blocks >= 1");
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("config key " + key + ": expected a nonnegative integer, got '" + v + "'");
  return out;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <class T>
Field size_field(T RunConfig::*section, std::size_t T::*member) {
  return {[=](const RunConfig& c) { return std::to_string((c.*section).*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*section).*member = static_cast<std::size_t>(parse_uint(k, v));
          }};
}

template <class T>
Field u64_field(T RunConfig::*section, std::uint64_t T::*member) {
  return {[=](const RunConfig& c) { return std::to_string((c.*section).*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) { (c.*section).*member = parse_uint(k, v); }};
}

template <class T>
Field double_field(T RunConfig::*section, double T::*member) {
  return {[=](const RunConfig& c) { return fmt_double((c.*section).*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) { (c.*section).*member = parse_double(k, v); }};
}

template <class T>
Field string_field(T RunConfig::*section, std::string T::*member) {
  return {[=](const RunConfig& c) { return (c.*section).*member; },
          [=](RunConfig& c, const std::string&, const std::string& v) { (c.*section).*member = v; }};
}

Field weight_field(LossWeights LossConfig::*pass, double LossWeights::*member) {
  return {[=](const RunConfig& c) { return fmt_double((c.loss.*pass).*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) { (c.loss.*pass).*member = parse_double(k, v); }};
}

// Shared by both passes.
Field shared_weight_field(double LossWeights::*member) {
  return {[=](const RunConfig& c) { return fmt_double(c.loss.morphed.*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            const double d = parse_double(k, v);
            c.loss.morphed.*member = d;
            c.loss.bona_fide.*member = d;
          }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    using B = BackendConfig;
    t["backend.image_size"] = size_field(&RunConfig::backend, &B::image_size);
    t["backend.latent_layers"] = size_field(&RunConfig::backend, &B::latent_layers);
    t["backend.latent_dim"] = size_field(&RunConfig::backend, &B::latent_dim);
    t["backend.feat_channels"] = size_field(&RunConfig::backend, &B::feat_channels);
    t["backend.feat_h"] = size_field(&RunConfig::backend, &B::feat_h);
    t["backend.feat_w"] = size_field(&RunConfig::backend, &B::feat_w);
    t["backend.injection_layer_k"] = size_field(&RunConfig::backend, &B::injection_layer_k);
    t["backend.frs_dim"] = size_field(&RunConfig::backend, &B::frs_dim);
    t["backend.disc_hidden"] = size_field(&RunConfig::backend, &B::disc_hidden);
    t["backend.seed"] = u64_field(&RunConfig::backend, &B::seed);

    using M = ModelConfig;
    t["model.idm_channels"] = size_field(&RunConfig::model, &M::idm_channels);
    t["model.fdm_blocks"] = size_field(&RunConfig::model, &M::fdm_blocks);
    t["model.ffm_blocks"] = size_field(&RunConfig::model, &M::ffm_blocks);
    t["model.bn_momentum"] = double_field(&RunConfig::model, &M::bn_momentum);
    t["model.seed"] = u64_field(&RunConfig::model, &M::seed);

    using T = TrainConfig;
    t["train.total_steps"] = size_field(&RunConfig::train, &T::total_steps);
    t["train.batch_size"] = size_field(&RunConfig::train, &T::batch_size);
    t["train.lr_modules"] = double_field(&RunConfig::train, &T::lr_modules);
    t["train.lr_disc"] = double_field(&RunConfig::train, &T::lr_disc);
    t["train.curriculum_cap_step"] = size_field(&RunConfig::train, &T::curriculum_cap_step);
    t["train.curriculum_p_max"] = double_field(&RunConfig::train, &T::curriculum_p_max);
    t["train.seed"] = u64_field(&RunConfig::train, &T::seed);
    t["train.checkpoint_every"] = size_field(&RunConfig::train, &T::checkpoint_every);
    t["train.optimizer"] = string_field(&RunConfig::train, &T::optimizer);

    using W = LossWeights;
    const std::pair<const char*, LossWeights LossConfig::*> passes[] = {{"loss.bonafide.", &LossConfig::bona_fide},
                                                                        {"loss.morphed.", &LossConfig::morphed}};
    for (const auto& [prefix, pass] : passes) {
      const std::string p = prefix;
      t[p + "lambda_id"] = weight_field(pass, &W::lambda_id);
      t[p + "lambda_l2"] = weight_field(pass, &W::lambda_l2);
      t[p + "lambda_lpips"] = weight_field(pass, &W::lambda_lpips);
      t[p + "lambda_ms_ssim"] = weight_field(pass, &W::lambda_ms_ssim);
      t[p + "lambda_feat"] = weight_field(pass, &W::lambda_feat);
      t[p + "lambda_inv_id"] = weight_field(pass, &W::lambda_inv_id);
      t[p + "lambda_adv"] = weight_field(pass, &W::lambda_adv);
    }
    t["loss.margin_m"] = shared_weight_field(&W::margin_m);
    t["loss.gamma_r1"] = shared_weight_field(&W::gamma_r1);
    t["loss.ms_ssim_scales"] = {[](const RunConfig& c) { return std::to_string(c.loss.ms_ssim.scales); },
                                [](RunConfig& c, const std::string& k, const std::string& v) {
                                  c.loss.ms_ssim.scales = static_cast<std::size_t>(parse_uint(k, v));
                                }};
    t["loss.ms_ssim_window"] = {[](const RunConfig& c) { return std::to_string(c.loss.ms_ssim.window); },
                                [](RunConfig& c, const std::string& k, const std::string& v) {
                                  c.loss.ms_ssim.window = static_cast<std::size_t>(parse_uint(k, v));
                                }};
    t["loss.ms_ssim_sigma"] = {[](const RunConfig& c) { return fmt_double(c.loss.ms_ssim.sigma); },
                               [](RunConfig& c, const std::string& k, const std::string& v) {
                                 c.loss.ms_ssim.sigma = parse_double(k, v);
                               }};

    using C = CorpusConfig;
    t["corpus.n_identities"] = size_field(&RunConfig::corpus, &C::n_identities);
    t["corpus.id_dim"] = size_field(&RunConfig::corpus, &C::id_dim);
    t["corpus.live_per_identity"] = size_field(&RunConfig::corpus, &C::live_per_identity);
    t["corpus.live_noise_sigma"] = double_field(&RunConfig::corpus, &C::live_noise_sigma);
    t["corpus.live_illum_max"] = double_field(&RunConfig::corpus, &C::live_illum_max);
    t["corpus.alpha"] = double_field(&RunConfig::corpus, &C::alpha);
    t["corpus.methods"] = {[](const RunConfig& c) {
                             std::string s;
                             for (std::size_t i = 0; i < c.corpus.methods.size(); ++i) s += (i ? "," : "") + c.corpus.methods[i];
                             return s;
                           },
                           [](RunConfig& c, const std::string&, const std::string& v) {
                             c.corpus.methods.clear();
                             std::stringstream ss(v);
                             std::string item;
                             while (std::getline(ss, item, ',')) {
                               item = trim(item);
                               if (!item.empty()) c.corpus.methods.push_back(item);
                             }
                           }};
    t["corpus.random_per_identity"] = size_field(&RunConfig::corpus, &C::random_per_identity);
    t["corpus.lookalike_per_identity"] = size_field(&RunConfig::corpus, &C::lookalike_per_identity);
    t["corpus.lookalike_pool"] = size_field(&RunConfig::corpus, &C::lookalike_pool);
    t["corpus.target_fmr"] = double_field(&RunConfig::corpus, &C::target_fmr);
    t["corpus.test_fraction"] = double_field(&RunConfig::corpus, &C::test_fraction);
    t["corpus.splice_area"] = double_field(&RunConfig::corpus, &C::splice_area);
    t["corpus.pixel_std"] = double_field(&RunConfig::corpus, &C::pixel_std);
    t["corpus.seed"] = u64_field(&RunConfig::corpus, &C::seed);

    t["eval.dataset"] = string_field(&RunConfig::eval, &EvalConfig::dataset);
    return t;
  }();
  return table;
}

}  // namespace

RunConfig RunConfig::parse(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::string preset = "toy";
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key == "preset") {
      if (value != "toy" && value != "reference") throw ConfigError("unknown preset '" + value + "'");
      preset = value;
      continue;
    }
    if (!fields().count(key)) throw ConfigError("unknown config key '" + key + "' (line " + std::to_string(lineno) + ")");
    if (kv.count(key)) throw ConfigError("duplicate config key '" + key + "'");
    kv[key] = value;
  }
  RunConfig c = preset == "reference" ? RunConfig::reference() : RunConfig::toy();
  for (const auto& [k, v] : kv) fields().at(k).set(c, k, v);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(*this);
  return out;
}

RunConfig RunConfig::from_map(const std::map<std::string, std::string>& kv) {
  RunConfig c;
  for (const auto& [k, v] : kv) {
    if (!fields().count(k)) throw ConfigError("unknown config key '" + k + "'");
    fields().at(k).set(c, k, v);
  }
  c.validate();
  return c;
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& [k, v] : to_map()) s += k + " = " + v + "\n";
  return s;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string RunConfig::digest(const std::vector<std::string>& prefixes) const {
  std::string canon;
  for (const auto& [k, v] : to_map()) {
    bool keep = prefixes.empty();
    for (const auto& p : prefixes) keep = keep || k.rfind(p, 0) == 0;
    if (keep) canon += k + "=" + v + "\n";
  }
  return hex64(fnv1a64(canon));
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  std::uint64_t h = mix(base);
  for (std::uint64_t p : parts) h = mix(h ^ mix(p));
  return h;
}

}  // namespace sfdm
