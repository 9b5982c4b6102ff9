#include "sfdm/toyworld.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "sfdm/error.hpp"
#include "sfdm/io.hpp"

namespace sfdm {

using nlohmann::json;

namespace {

void blur3(double* plane, std::size_t h, std::size_t w) {
  std::vector<double> tmp(plane, plane + h * w);
  auto at = [&](long y, long x) {
    y = std::clamp<long>(y, 0, static_cast<long>(h) - 1);
    x = std::clamp<long>(x, 0, static_cast<long>(w) - 1);
    return tmp[y * w + x];
  };
  const double k[3] = {0.25, 0.5, 0.25};
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long x = 0; x < static_cast<long>(w); ++x) {
      double acc = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) acc += k[dy + 1] * k[dx + 1] * at(y + dy, x + dx);
      plane[y * w + x] = acc;
    }
}

constexpr double kWPathRatio = 0.4;

}  // namespace

ToyWorld::ToyWorld(const CorpusConfig& cfg, const Backends& backends) : cfg_(cfg), backends_(backends) {
  cfg_.validate();
  const ToyGenerator& gen = backends_.toy_generator();
  const BackendConfig& bc = gen.config();
  const std::size_t fd = gen.feature_dim(), td = gen.tail_dim(), code_dim = fd + td, k = cfg_.id_dim;
  const std::size_t pixels = gen.matrix().dim(0);
  if (k == 0 || k > pixels) throw ConfigError("corpus.id_dim out of range");
  std::mt19937_64 rng(derive_seed(cfg_.seed, {0x1d}));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(code_dim, k);
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> col(code_dim);
    for (auto& v : col) v = normal(rng);
    // smooth feature directions so identity lives in low spatial frequencies
    for (std::size_t c = 0; c < bc.feat_channels; ++c) {
      blur3(col.data() + c * bc.feat_h * bc.feat_w, bc.feat_h, bc.feat_w);
      blur3(col.data() + c * bc.feat_h * bc.feat_w, bc.feat_h, bc.feat_w);
    }
    std::vector<double> f_only(col), w_only(code_dim, 0.0);
    std::fill(f_only.begin() + static_cast<long>(fd), f_only.end(), 0.0);
    std::copy(col.begin() + static_cast<long>(fd), col.end(), w_only.begin() + static_cast<long>(fd));
    double nf = 0, nw = 0;
    for (double v : gen.apply(f_only)) nf += v * v;
    for (double v : gen.apply(w_only)) nw += v * v;
    const double scale = nw > 0 ? kWPathRatio * std::sqrt(nf / nw) : 0.0;
    for (std::size_t i = 0; i < code_dim; ++i) a(i, j) = i < fd ? col[i] : col[i] * scale;
  }
  // Orthonormalize the image directions: M a = Q R  =>  M (a R^-1) = Q.
  Eigen::MatrixXd img(pixels, k);
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> col(code_dim);
    for (std::size_t i = 0; i < code_dim; ++i) col[i] = a(i, j);
    const auto y = gen.apply(col);
    for (std::size_t i = 0; i < pixels; ++i) img(i, j) = y[i];
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(img);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd basis = a * r.inverse();
  const double s = cfg_.pixel_std * std::sqrt(static_cast<double>(pixels) / static_cast<double>(k));
  basis_ = Tensor({code_dim, k});
  for (std::size_t i = 0; i < code_dim; ++i)
    for (std::size_t j = 0; j < k; ++j) basis_[i * k + j] = s * basis(i, j);
}

ToyIdentity ToyWorld::sample_identity(std::mt19937_64& rng, std::string id) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  ToyIdentity t{std::move(id), std::vector<double>(cfg_.id_dim)};
  for (int attempt = 0; attempt < 1000; ++attempt) {
    for (auto& v : t.z) v = normal(rng);
    const auto img = backends_.toy_generator().apply(code(t));
    const double peak = std::abs(*std::max_element(img.begin(), img.end(), [](double x, double y) {
      return std::abs(x) < std::abs(y);
    }));
    if (peak <= 0.98) return t;
  }
  throw ConfigError("corpus.pixel_std too large: identities do not fit the pixel range");
}

std::vector<double> ToyWorld::code(const ToyIdentity& identity) const {
  if (identity.z.size() != cfg_.id_dim) throw ShapeMismatch("identity dimension mismatch");
  const std::size_t n = basis_.dim(0), k = basis_.dim(1);
  std::vector<double> c(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) c[i] += basis_[i * k + j] * identity.z[j];
  return c;
}

FeatureMap ToyWorld::feature_map(const ToyIdentity& identity) const {
  const auto c = code(identity);
  const BackendConfig& bc = backends_.config;
  Tensor f(bc.feature_shape());
  std::copy(c.begin(), c.begin() + static_cast<long>(f.size()), f.vec().begin());
  return FeatureMap(std::move(f));
}

ImageTensor ToyWorld::render(const ToyIdentity& identity, const CaptureParams& params) const {
  Tensor img(backends_.config.image_shape());
  img.vec() = backends_.toy_generator().apply(code(identity));
  if (params.domain == CaptureDomain::Live) {
    std::mt19937_64 rng(params.noise_seed);
    std::normal_distribution<double> normal(0.0, params.noise_sigma);
    for (auto& v : img.vec()) v = std::clamp(v + params.illum_shift + normal(rng), -1.0, 1.0);
  }
  return ImageTensor(std::move(img));
}

CaptureParams ToyWorld::live_params(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> illum(-cfg_.live_illum_max, cfg_.live_illum_max);
  CaptureParams p;
  p.domain = CaptureDomain::Live;
  p.noise_sigma = cfg_.live_noise_sigma;
  p.illum_shift = illum(rng);
  p.noise_seed = rng();
  return p;
}

ImageTensor morph_blend(const ImageTensor& a, const ImageTensor& c, double alpha) {
  require_same_shape(a.tensor(), c.tensor(), "morph_blend");
  if (!(alpha >= 0 && alpha <= 1)) throw RangeError("alpha must lie in [0, 1]");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::clamp(alpha * a.tensor()[i] + (1 - alpha) * c.tensor()[i], -1.0, 1.0);
  return ImageTensor(std::move(out));
}

ImageTensor morph_splice(const ImageTensor& a, const ImageTensor& c, double alpha, const Tensor& mask) {
  require_same_shape(a.tensor(), c.tensor(), "morph_splice");
  if (mask.shape() != Shape{a.height(), a.width()}) throw ShapeMismatch("splice mask must match the image plane");
  const ImageTensor blend = morph_blend(a, c, alpha);
  Tensor out = a.tensor();
  const std::size_t plane = a.height() * a.width();
  for (std::size_t ch = 0; ch < a.channels(); ++ch)
    for (std::size_t i = 0; i < plane; ++i)
      if (mask[i] != 0) out[ch * plane + i] = blend.tensor()[ch * plane + i];
  return ImageTensor(std::move(out));
}

Tensor centered_square_mask(std::size_t size, double area_fraction) {
  if (!(area_fraction >= 0 && area_fraction <= 1)) throw RangeError("mask area must lie in [0, 1]");
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(area_fraction) * static_cast<double>(size)));
  const std::size_t lo = (size - side) / 2;
  Tensor m({size, size});
  for (std::size_t y = lo; y < lo + side; ++y)
    for (std::size_t x = lo; x < lo + side; ++x) m[y * size + x] = 1.0;
  return m;
}

FeatureMap analytic_demorph_oracle(const FeatureMap& f_morph, const FeatureMap& f_ref, double alpha) {
  require_same_shape(f_morph.tensor(), f_ref.tensor(), "analytic_demorph_oracle");
  if (alpha == 0) throw DivisionDomain("oracle undefined for alpha = 0");
  return FeatureMap((f_morph.tensor() - f_ref.tensor() * (1 - alpha)) * (1 / alpha));
}

CorruptionKind parse_corruption(std::string_view s) {
  if (s == "brightness") return CorruptionKind::Brightness;
  if (s == "gaussian_noise") return CorruptionKind::GaussianNoise;
  if (s == "downsample") return CorruptionKind::Downsample;
  throw UnknownKind("unknown corruption: " + std::string(s));
}

std::string_view to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::Brightness: return "brightness";
    case CorruptionKind::GaussianNoise: return "gaussian_noise";
    case CorruptionKind::Downsample: return "downsample";
  }
  return "?";
}

// ImageNet-C tables, doubled for the [-1, 1] pixel range.
double brightness_delta(int severity) {
  static const double t[] = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  if (severity < 0 || severity > 5) throw RangeError("severity must lie in 0..5");
  return t[severity];
}

double noise_sigma(int severity) {
  static const double t[] = {0.0, 0.16, 0.24, 0.36, 0.52, 0.76};
  if (severity < 0 || severity > 5) throw RangeError("severity must lie in 0..5");
  return t[severity];
}

ImageTensor corrupt(const ImageTensor& image, CorruptionKind kind, int severity, std::uint64_t seed) {
  if (severity < 0 || severity > 5) throw RangeError("severity must lie in 0..5");
  if (severity == 0) return image;
  Tensor t = image.tensor();
  switch (kind) {
    case CorruptionKind::Brightness: {
      const double d = brightness_delta(severity);
      for (auto& v : t.vec()) v = std::clamp(v + d, -1.0, 1.0);
      break;
    }
    case CorruptionKind::GaussianNoise: {
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> normal(0.0, noise_sigma(severity));
      for (auto& v : t.vec()) v = std::clamp(v + normal(rng), -1.0, 1.0);
      break;
    }
    case CorruptionKind::Downsample: {
      const std::size_t h = image.height(), w = image.width();
      t = resize_bilinear(resize_bilinear(t, std::max<std::size_t>(1, h / 2), std::max<std::size_t>(1, w / 2)), h, w);
      for (auto& v : t.vec()) v = std::clamp(v, -1.0, 1.0);
      break;
    }
  }
  return ImageTensor(std::move(t));
}

std::shared_ptr<const FaceRecognizer> make_toy_frs(const BackendConfig& cfg, std::size_t index) {
  if (index == 0) return std::make_shared<const ToyFaceRecognizer>(cfg, cfg.seed + 1);
  return std::make_shared<const ToyFaceRecognizer>(cfg, derive_seed(cfg.seed, {0xf25, index}),
                                                   "toy_frs_" + std::to_string(index));
}

std::pair<std::vector<double>, std::vector<double>> mated_nonmated_scores(const std::vector<CorpusIdentity>& ids,
                                                                          const FaceRecognizer& frs) {
  std::vector<Embedding> docs;
  std::vector<std::vector<Embedding>> lives;
  for (const auto& id : ids) {
    docs.push_back(frs.embed(id.doc));
    lives.emplace_back();
    for (const auto& l : id.live) lives.back().push_back(frs.embed(l));
  }
  std::vector<double> mated, non;
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < ids.size(); ++j)
      for (const auto& e : lives[j]) (i == j ? mated : non).push_back(similarity(docs[i], e));
  return {mated, non};
}

namespace {

std::vector<CorpusIdentity> build_identities(const CorpusConfig& cfg, const ToyWorld& world) {
  std::vector<CorpusIdentity> ids;
  char name[32];
  for (std::size_t i = 0; i < cfg.n_identities; ++i) {
    std::snprintf(name, sizeof name, "id%04zu", i);
    std::mt19937_64 rng(derive_seed(cfg.seed, {1, i}));
    CorpusIdentity ci;
    ci.identity = world.sample_identity(rng, name);
    ci.doc = io::quantize(world.render(ci.identity, {}));
    for (std::size_t j = 0; j < cfg.live_per_identity; ++j)
      ci.live.push_back(io::quantize(world.render(ci.identity, world.live_params(rng))));
    ids.push_back(std::move(ci));
  }
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed(cfg.seed, {3}));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::lround(cfg.test_fraction * static_cast<double>(ids.size())));
  for (std::size_t r = 0; r < order.size(); ++r) ids[order[r]].split = r < n_test ? "test" : "train";
  return ids;
}

}  // namespace

ToyCorpus build_corpus(const CorpusConfig& cfg, const Backends& backends) {
  return build_corpus(cfg, backends, Threshold{});
}

ToyCorpus build_corpus(const CorpusConfig& cfg, const Backends& backends, const Threshold& fixed) {
  cfg.validate();
  if (cfg.n_identities < 10) throw InsufficientIdentities("the toy corpus needs at least 10 identities");
  const ToyWorld world(cfg, backends);
  ToyCorpus corpus;
  corpus.config = cfg;
  corpus.backend = backends.config;
  corpus.identities = build_identities(cfg, world);
  const FaceRecognizer& frs = *backends.frs;
  if (fixed.mated_n == 0) {
    const auto [mated, non] = mated_nonmated_scores(corpus.identities, frs);
    corpus.calibration = calibrate_threshold(mated, non, cfg.target_fmr, frs.name());
  } else {
    corpus.calibration = fixed;
  }
  const double tau = corpus.calibration.tau;

  std::vector<Embedding> doc_emb, live0;
  for (const auto& id : corpus.identities) {
    doc_emb.push_back(frs.embed(id.doc));
    live0.push_back(frs.embed(id.live.front()));
  }
  const Tensor mask = centered_square_mask(backends.config.image_size, cfg.splice_area);
  char name[96];
  for (const char* split : {"train", "test"}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < corpus.identities.size(); ++i)
      if (corpus.identities[i].split == split) members.push_back(i);
    if (members.size() < 2) continue;
    for (std::size_t i : members) {
      // look-alike pool: non-mated subjects whose score is closest to tau
      std::vector<std::size_t> others;
      for (std::size_t j : members)
        if (j != i) others.push_back(j);
      std::vector<std::size_t> pool = others;
      std::stable_sort(pool.begin(), pool.end(), [&](std::size_t x, std::size_t y) {
        return std::abs(similarity(doc_emb[i], doc_emb[x]) - tau) < std::abs(similarity(doc_emb[i], doc_emb[y]) - tau);
      });
      pool.resize(std::min(pool.size(), cfg.lookalike_pool));
      for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
        const std::string& method = cfg.methods[mi];
        std::mt19937_64 rng(derive_seed(cfg.seed, {4, i, mi}));
        std::vector<std::pair<std::string, std::size_t>> partners;
        auto pick = [&](std::vector<std::size_t> from, std::size_t count, const char* pairing) {
          std::shuffle(from.begin(), from.end(), rng);
          for (std::size_t k = 0; k < std::min(count, from.size()); ++k) partners.emplace_back(pairing, from[k]);
        };
        pick(others, cfg.random_per_identity, "random");
        pick(pool, cfg.lookalike_per_identity, "lookalike");
        for (std::size_t k = 0; k < partners.size(); ++k) {
          const auto& [pairing, c] = partners[k];
          const CorpusIdentity& A = corpus.identities[i];
          const CorpusIdentity& C = corpus.identities[c];
          CorpusMorph m;
          std::snprintf(name, sizeof name, "m_%s_%s_%s_%s_%zu", method.c_str(), pairing.c_str(),
                        A.identity.id.c_str(), C.identity.id.c_str(), k);
          m.id = name;
          m.accomplice = i;
          m.criminal = c;
          m.alpha = cfg.alpha;
          m.method = method;
          m.pairing = pairing;
          m.split = split;
          m.image = io::quantize(method == "splice" ? morph_splice(A.doc, C.doc, cfg.alpha, mask)
                                                    : morph_blend(A.doc, C.doc, cfg.alpha));
          const Embedding e = frs.embed(m.image);
          m.accepted = similarity(e, live0[i]) >= tau && similarity(e, live0[c]) >= tau;
          corpus.morphs.push_back(std::move(m));
        }
      }
    }
  }
  return corpus;
}

std::size_t ToyCorpus::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < identities.size(); ++i)
    if (identities[i].identity.id == id) return i;
  throw DecodeError("unknown identity in manifest: " + id);
}

namespace {

std::string doc_path(const CorpusIdentity& ci) { return "images/" + ci.identity.id + "_doc.ppm"; }
std::string live_path(const CorpusIdentity& ci, std::size_t j) {
  return "images/" + ci.identity.id + "_live" + std::to_string(j) + ".ppm";
}
std::string morph_path(const CorpusMorph& m) { return "morphs/" + m.id + ".ppm"; }

json config_json(const ToyCorpus& c) {
  RunConfig rc;
  rc.backend = c.backend;
  rc.corpus = c.config;
  json j = json::object();
  for (const auto& [k, v] : rc.to_map())
    if (k.rfind("corpus.", 0) == 0 || k.rfind("backend.", 0) == 0) j[k] = v;
  return j;
}

}  // namespace

std::string ToyCorpus::manifest_text() const {
  json m;
  m["config"] = config_json(*this);
  json ids = json::array(), bona = json::array(), morphs_j = json::array();
  for (const auto& ci : identities) {
    json lives = json::array();
    for (std::size_t j = 0; j < ci.live.size(); ++j) lives.push_back(live_path(ci, j));
    ids.push_back({{"id", ci.identity.id}, {"z", ci.identity.z}, {"split", ci.split}, {"doc", doc_path(ci)},
                   {"live", lives}});
    for (std::size_t j = 0; j < ci.live.size(); ++j)
      bona.push_back({{"pair_id", "bf_" + ci.identity.id + "_" + std::to_string(j)},
                      {"identity", ci.identity.id},
                      {"doc", doc_path(ci)},
                      {"ref", live_path(ci, j)},
                      {"split", ci.split}});
  }
  for (const auto& mo : morphs)
    morphs_j.push_back({{"id", mo.id},
                        {"image", morph_path(mo)},
                        {"accomplice", identities[mo.accomplice].identity.id},
                        {"criminal", identities[mo.criminal].identity.id},
                        {"alpha", mo.alpha},
                        {"method", mo.method},
                        {"pairing", mo.pairing},
                        {"accepted", mo.accepted},
                        {"split", mo.split}});
  m["identities"] = ids;
  m["bonafide_entries"] = bona;
  m["morph_entries"] = morphs_j;
  m["calibration"] = {{"frs", calibration.frs},
                      {"tau", calibration.tau},
                      {"target_fmr", calibration.target_fmr},
                      {"mated_n", calibration.mated_n},
                      {"nonmated_n", calibration.nonmated_n},
                      {"achieved_tmr", calibration.achieved_tmr},
                      {"achieved_fmr", calibration.achieved_fmr}};
  return m.dump(1) + "\n";
}

std::string ToyCorpus::digest() const { return hex64(fnv1a64(manifest_text())); }

void ToyCorpus::save(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  std::filesystem::create_directories(dir / "morphs", ec);
  if (ec) throw IoError("cannot create corpus directory " + dir.string() + ": " + ec.message());
  for (const auto& ci : identities) {
    io::write_ppm(dir / doc_path(ci), ci.doc);
    for (std::size_t j = 0; j < ci.live.size(); ++j) io::write_ppm(dir / live_path(ci, j), ci.live[j]);
  }
  for (const auto& m : morphs) io::write_ppm(dir / morph_path(m), m.image);
  io::write_file_atomic(dir / "manifest.json", manifest_text());
}

ToyCorpus ToyCorpus::load(const std::filesystem::path& dir) {
  json m;
  try {
    m = json::parse(io::read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw DecodeError(std::string("malformed manifest: ") + e.what());
  }
  try {
    ToyCorpus c;
    std::map<std::string, std::string> kv;
    for (const auto& [k, v] : m.at("config").items()) kv[k] = v.get<std::string>();
    RunConfig rc = RunConfig::toy();
    auto full = rc.to_map();
    for (const auto& [k, v] : kv) full[k] = v;
    rc = RunConfig::from_map(full);
    c.config = rc.corpus;
    c.backend = rc.backend;
    for (const auto& j : m.at("identities")) {
      CorpusIdentity ci;
      ci.identity.id = j.at("id").get<std::string>();
      ci.identity.z = j.at("z").get<std::vector<double>>();
      ci.split = j.at("split").get<std::string>();
      ci.doc = io::read_ppm(dir / j.at("doc").get<std::string>());
      for (const auto& p : j.at("live")) ci.live.push_back(io::read_ppm(dir / p.get<std::string>()));
      c.identities.push_back(std::move(ci));
    }
    for (const auto& j : m.at("morph_entries")) {
      CorpusMorph mo;
      mo.id = j.at("id").get<std::string>();
      mo.accomplice = c.index_of(j.at("accomplice").get<std::string>());
      mo.criminal = c.index_of(j.at("criminal").get<std::string>());
      mo.alpha = j.at("alpha").get<double>();
      mo.method = j.at("method").get<std::string>();
      mo.pairing = j.at("pairing").get<std::string>();
      mo.accepted = j.at("accepted").get<bool>();
      mo.split = j.at("split").get<std::string>();
      mo.image = io::read_ppm(dir / j.at("image").get<std::string>());
      c.morphs.push_back(std::move(mo));
    }
    const auto& cal = m.at("calibration");
    c.calibration.frs = cal.at("frs").get<std::string>();
    c.calibration.tau = cal.at("tau").get<double>();
    c.calibration.target_fmr = cal.at("target_fmr").get<double>();
    c.calibration.mated_n = cal.at("mated_n").get<std::size_t>();
    c.calibration.nonmated_n = cal.at("nonmated_n").get<std::size_t>();
    c.calibration.achieved_tmr = cal.at("achieved_tmr").get<double>();
    c.calibration.achieved_fmr = cal.at("achieved_fmr").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw DecodeError(std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace sfdm
