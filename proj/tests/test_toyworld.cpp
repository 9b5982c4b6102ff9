#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "sfdm/io.hpp"
#include "sfdm/toyworld.hpp"

using namespace sfdm;

namespace {

const Backends& toy() {
  static const Backends b = make_toy_backends(BackendConfig::toy());
  return b;
}

const ToyWorld& world() {
  static const ToyWorld w(CorpusConfig{}, toy());
  return w;
}

const ToyCorpus& corpus() {
  static const ToyCorpus c = build_corpus(CorpusConfig{}, toy());
  return c;
}

ToyIdentity identity(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return world().sample_identity(rng, "x");
}

ImageTensor doc(const ToyIdentity& id) { return world().render(id, {}); }

}  // namespace

TEST(ToyWorld, DeriveSeedIsDeterministicAndSpreads) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(derive_seed(1, {2}), derive_seed(2, {2}));
}

TEST(ToyWorld, IdentitySamplingIsDeterministic) {
  const auto a = identity(5), b = identity(5);
  EXPECT_EQ(a.z, b.z);
  for (double v : a.z) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NE(identity(6).z, a.z);
  EXPECT_EQ(doc(a).tensor(), doc(b).tensor());
}

TEST(ToyWorld, DistinctIdentitiesFallBelowMatedThreshold) {
  const double tau = corpus().calibration.tau;
  std::vector<Embedding> e;
  for (std::uint64_t i = 0; i < 1000; ++i) e.push_back(toy().frs->embed(doc(identity(1000 + i))));
  std::size_t below = 0, total = 0;
  for (std::size_t i = 0; i < e.size(); ++i)
    for (std::size_t j = i + 1; j < e.size(); ++j) {
      below += similarity(e[i], e[j]) < tau;
      ++total;
    }
  EXPECT_GE(static_cast<double>(below) / total, 0.99);
}

TEST(ToyWorld, DocumentRendersAreInGeneratorRange) {
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto id = identity(i);
    const ImageTensor img = doc(id);
    EXPECT_TRUE(img.in_range());
    const auto [w, f] = toy().encoder->encode(img);
    const ImageTensor back = toy().generator->synthesize(f, w.tail(toy().config.injection_layer_k));
    EXPECT_LE(max_abs_diff(back.tensor(), img.tensor()), 1e-4);
    EXPECT_LE(max_abs_diff(f.tensor(), world().feature_map(id).tensor()), 1e-6);
  }
}

TEST(ToyWorld, LiveCapturesVerifyAgainstDocument) {
  const double tau = corpus().calibration.tau;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto id = identity(i);
    std::mt19937_64 rng(i);
    const ImageTensor live = world().render(id, world().live_params(rng));
    EXPECT_TRUE(live.in_range());
    EXPECT_GE(similarity(toy().frs->embed(live), toy().frs->embed(doc(id))), tau);
  }
  CaptureParams quiet;
  quiet.domain = CaptureDomain::Live;
  EXPECT_EQ(world().render(identity(1), quiet).tensor(), world().render(identity(1), quiet).tensor());
}

TEST(ToyWorld, BlendMorphs) {
  const auto a = doc(identity(1)), c = doc(identity(2));
  EXPECT_EQ(morph_blend(a, c, 1.0).tensor(), a.tensor());
  EXPECT_EQ(morph_blend(a, c, 0.0).tensor(), c.tensor());
  const auto m = morph_blend(a, c, 0.5);
  const auto fm = toy().encoder->encode(m).second.tensor();
  const auto fa = world().feature_map(identity(1)).tensor(), fc = world().feature_map(identity(2)).tensor();
  EXPECT_LE(max_abs_diff(fm, fa * 0.5 + fc * 0.5), 1e-5);
  EXPECT_THROW(morph_blend(a, ImageTensor(Tensor({3, 8, 8})), 0.5), ShapeMismatch);
}

TEST(ToyWorld, SpliceMorphs) {
  const auto a = doc(identity(1)), c = doc(identity(2));
  const std::size_t s = toy().config.image_size;
  EXPECT_EQ(morph_splice(a, c, 0.5, Tensor({s, s}, 1.0)).tensor(), morph_blend(a, c, 0.5).tensor());
  EXPECT_EQ(morph_splice(a, c, 0.5, Tensor({s, s})).tensor(), a.tensor());
  const Tensor mask = centered_square_mask(s, 0.5);
  double area = 0;
  for (double v : mask.vec()) area += v;
  EXPECT_NEAR(area / (s * s), 0.5, 0.1);
  const auto sp = morph_splice(a, c, 0.5, mask);
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t i = 0; i < s * s; ++i)
      if (mask[i] == 0) EXPECT_EQ(sp.tensor()[ch * s * s + i], a.tensor()[ch * s * s + i]);
  EXPECT_THROW(morph_splice(a, c, 0.5, Tensor({s, s + 1})), ShapeMismatch);
}

TEST(ToyWorld, AnalyticOracle) {
  const auto ia = identity(1), ic = identity(2);
  const auto fa = world().feature_map(ia), fc = world().feature_map(ic);
  const FeatureMap fm(fa.tensor() * 0.5 + fc.tensor() * 0.5);
  EXPECT_LE(max_abs_diff(analytic_demorph_oracle(fm, fc, 0.5).tensor(), fa.tensor()), 1e-6);
  EXPECT_THROW(analytic_demorph_oracle(fm, fc, 0.0), DivisionDomain);
  // End to end from images: the oracle render verifies against I_A.
  const auto m = morph_blend(doc(ia), doc(ic), 0.5);
  const auto [wm, f_morph] = toy().encoder->encode(m);
  const auto [wc, f_ref] = toy().encoder->encode(doc(ic));
  const LatentCode w_out((wm.tensor() - wc.tensor() * 0.5) * 2.0);
  const auto out = toy().generator->synthesize(analytic_demorph_oracle(f_morph, f_ref, 0.5), w_out.tail(2));
  EXPECT_GE(similarity(toy().frs->embed(out), toy().frs->embed(doc(ia))), corpus().calibration.tau);
}

TEST(ToyWorld, Corruptions) {
  Tensor t({3, 16, 16});
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& v : t.vec()) v = u(rng);
  const ImageTensor img(t);
  for (auto k : {CorruptionKind::Brightness, CorruptionKind::GaussianNoise, CorruptionKind::Downsample})
    EXPECT_EQ(corrupt(img, k, 0).tensor(), t) << to_string(k);
  const auto bright = corrupt(img, CorruptionKind::Brightness, 2);
  double shift = 0;
  for (std::size_t i = 0; i < t.size(); ++i) shift += bright.tensor()[i] - t[i];
  EXPECT_NEAR(shift / t.size(), brightness_delta(2), 1e-12);
  EXPECT_EQ(corrupt(img, CorruptionKind::GaussianNoise, 2, 9).tensor(),
            corrupt(img, CorruptionKind::GaussianNoise, 2, 9).tensor());
  EXPECT_NE(corrupt(img, CorruptionKind::GaussianNoise, 2, 9).tensor(), t);
  EXPECT_EQ(corrupt(img, CorruptionKind::Downsample, 1).shape(), img.shape());
  EXPECT_THROW(parse_corruption("jpeg"), UnknownKind);
  EXPECT_EQ(parse_corruption("gaussian_noise"), CorruptionKind::GaussianNoise);
  EXPECT_THROW(corrupt(img, CorruptionKind::Brightness, 6), RangeError);
}

TEST(ToyWorld, CorpusStructureAndFilter) {
  const ToyCorpus& c = corpus();
  EXPECT_EQ(c.identities.size(), 100u);
  std::size_t test = 0;
  for (const auto& ci : c.identities) {
    test += ci.split == "test";
    EXPECT_EQ(ci.live.size(), 3u);
  }
  EXPECT_EQ(test, 20u);
  EXPECT_EQ(c.morphs.size(), 100u * 6 * 2);
  EXPECT_LE(c.calibration.achieved_fmr, c.config.target_fmr);
  const double tau = c.calibration.tau;
  std::size_t accepted = 0;
  for (const auto& m : c.morphs) {
    EXPECT_NE(m.accomplice, m.criminal);
    EXPECT_EQ(c.identities[m.accomplice].split, m.split);
    EXPECT_EQ(c.identities[m.criminal].split, m.split);
    const Embedding e = toy().frs->embed(m.image);
    const bool both = similarity(e, toy().frs->embed(c.identities[m.accomplice].live[0])) >= tau &&
                      similarity(e, toy().frs->embed(c.identities[m.criminal].live[0])) >= tau;
    EXPECT_EQ(both, m.accepted) << m.id;
    accepted += m.accepted;
  }
  EXPECT_GT(accepted, 100u);
}

TEST(ToyWorld, LookalikePartnersComeFromThresholdPool) {
  const ToyCorpus& c = corpus();
  const double tau = c.calibration.tau;
  for (const auto& m : c.morphs) {
    if (m.pairing != "lookalike") continue;
    const auto& a = c.identities[m.accomplice];
    const Embedding ea = toy().frs->embed(a.doc);
    std::vector<std::pair<double, std::size_t>> gaps;
    for (std::size_t j = 0; j < c.identities.size(); ++j)
      if (j != m.accomplice && c.identities[j].split == a.split)
        gaps.emplace_back(std::abs(similarity(ea, toy().frs->embed(c.identities[j].doc)) - tau), j);
    std::stable_sort(gaps.begin(), gaps.end(),
                     [](const auto& x, const auto& y) { return x.first < y.first; });
    bool in_pool = false;
    for (std::size_t k = 0; k < 5; ++k) in_pool = in_pool || gaps[k].second == m.criminal;
    EXPECT_TRUE(in_pool) << m.id;
  }
}

TEST(ToyWorld, SmallCorpusCountsAndErrors) {
  CorpusConfig cfg;
  cfg.n_identities = 50;
  cfg.methods = {"blend"};
  const auto c = build_corpus(cfg, toy());
  EXPECT_LE(c.morphs.size(), 300u);
  for (const auto& m : c.morphs) EXPECT_EQ(m.method, "blend");
  cfg.n_identities = 9;
  EXPECT_THROW(build_corpus(cfg, toy()), InsufficientIdentities);
}

TEST(ToyWorld, ManifestIsDeterministicAndRoundTrips) {
  const ToyCorpus again = build_corpus(CorpusConfig{}, toy());
  EXPECT_EQ(again.manifest_text(), corpus().manifest_text());
  const auto dir = std::filesystem::temp_directory_path() / "sfdm_test_corpus";
  std::filesystem::remove_all(dir);
  corpus().save(dir);
  const ToyCorpus loaded = ToyCorpus::load(dir);
  EXPECT_EQ(loaded.manifest_text(), corpus().manifest_text());
  EXPECT_EQ(loaded.digest(), corpus().digest());
  for (std::size_t i = 0; i < loaded.identities.size(); ++i) {
    EXPECT_EQ(loaded.identities[i].doc.tensor(), corpus().identities[i].doc.tensor());
    EXPECT_EQ(loaded.identities[i].live[2].tensor(), corpus().identities[i].live[2].tensor());
  }
  for (std::size_t i = 0; i < loaded.morphs.size(); ++i)
    EXPECT_EQ(loaded.morphs[i].image.tensor(), corpus().morphs[i].image.tensor());
  const std::string text = io::read_file(dir / "manifest.json");
  for (const char* key : {"\"config\"", "\"identities\"", "\"bonafide_entries\"", "\"morph_entries\""})
    EXPECT_NE(text.find(key), std::string::npos) << key;
  std::filesystem::remove_all(dir);
  EXPECT_THROW(ToyCorpus::load(dir), IoError);
}

TEST(ImageIo, PpmRoundTripAndQuantization) {
  Tensor t({3, 5, 7});
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& v : t.vec()) v = u(rng);
  const ImageTensor img(t);
  const ImageTensor q = io::quantize(img);
  EXPECT_LE(max_abs_diff(q.tensor(), t), 1.0 / 255 + 1e-12);
  EXPECT_EQ(io::decode_ppm(io::encode_ppm(img)).tensor(), q.tensor());
  EXPECT_EQ(io::quantize(q).tensor(), q.tensor());
  EXPECT_EQ(io::to_byte(-1.0), 0);
  EXPECT_EQ(io::to_byte(1.0), 255);
  EXPECT_THROW(io::decode_ppm("P5\n1 1\n255\n\0"), DecodeError);
  EXPECT_THROW(io::decode_ppm("P6\n4 4\n255\nabc"), DecodeError);
}
