#include <gtest/gtest.h>

#include "sfdm/backends.hpp"
#include "test_util.hpp"

using namespace sfdm;
using sfdm::testing::random_tensor;

namespace {

const Backends& toy() {
  static const Backends b = make_toy_backends(BackendConfig::toy());
  return b;
}

// Random code -> image in the generator's range, scaled to stay inside [-1, 1].
std::pair<FeatureMap, LatentCode> random_code(std::mt19937_64& rng, double scale = 0.3) {
  const auto& cfg = toy().config;
  return {FeatureMap(random_tensor(cfg.feature_shape(), rng, -scale, scale)),
          LatentCode(random_tensor({cfg.tail_layers(), cfg.latent_dim}, rng, -scale, scale))};
}

}  // namespace

TEST(Backends, EncodeInvertsSynthesizeOnGeneratorRange) {
  std::mt19937_64 rng(1);
  const auto& b = toy();
  for (int i = 0; i < 100; ++i) {
    auto [f, w] = random_code(rng);
    const ImageTensor img = b.generator->synthesize(f, w);
    auto [w_enc, f_enc] = b.encoder->encode(img);
    EXPECT_EQ(w_enc.layers(), b.config.latent_layers);
    const ImageTensor back = b.generator->synthesize(f_enc, w_enc.tail(b.config.injection_layer_k));
    ASSERT_LT(max_abs_diff(back.tensor(), img.tensor()), 1e-4);
    ASSERT_LT(max_abs_diff(f_enc.tensor(), f.tensor()), 1e-6);
  }
}

TEST(Backends, ToyGeneratorIsLinear) {
  std::mt19937_64 rng(2);
  const auto& b = toy();
  for (int i = 0; i < 100; ++i) {
    auto [f1, w1] = random_code(rng);
    auto [f2, w2] = random_code(rng);
    const double a = std::uniform_real_distribution<double>(-0.5, 1.5)(rng), c = 1.0 - a;
    const FeatureMap fm(f1.tensor() * a + f2.tensor() * c);
    const LatentCode wm(w1.tensor() * a + w2.tensor() * c);
    const Tensor lhs = b.generator->synthesize(fm, wm).tensor();
    const Tensor rhs = b.generator->synthesize(f1, w1).tensor() * a + b.generator->synthesize(f2, w2).tensor() * c;
    ASSERT_LT(max_abs_diff(lhs, rhs), 1e-6);
  }
}

TEST(Backends, ShapeErrors) {
  const auto& b = toy();
  EXPECT_THROW(b.encoder->encode(ImageTensor(Tensor({3, 8, 8}))), ShapeMismatch);
  std::mt19937_64 rng(3);
  auto [f, w] = random_code(rng);
  EXPECT_THROW(b.generator->synthesize(f, LatentCode(Tensor({3, 8}))), ShapeMismatch);
  EXPECT_THROW(b.generator->synthesize(FeatureMap(Tensor({8, 4, 4})), w), ShapeMismatch);
}

TEST(Backends, ZeroImageEncodesFinite) {
  auto [w, f] = toy().encoder->encode(ImageTensor(Tensor({3, 16, 16})));
  EXPECT_TRUE(w.tensor().all_finite());
  EXPECT_TRUE(f.tensor().all_finite());
  EXPECT_NEAR(squared_norm(f.tensor()), 0.0, 1e-20);
}

TEST(Backends, FrsEmbeddingsAreUnitAndDeterministic) {
  std::mt19937_64 rng(4);
  const auto& frs = *toy().frs;
  const ImageTensor x(random_tensor({3, 16, 16}, rng));
  const Embedding e1 = frs.embed(x), e2 = frs.embed(x);
  EXPECT_EQ(e1.values(), e2.values());
  double n = 0;
  for (double v : e1.values()) n += v * v;
  EXPECT_NEAR(n, 1.0, 1e-6);
  EXPECT_EQ(e1.dim(), toy().config.frs_dim);
  EXPECT_NEAR(similarity(e1, e1), 1.0, 1e-12);
  std::vector<double> neg = e1.values();
  for (double& v : neg) v = -v;
  EXPECT_NEAR(similarity(e1, Embedding(neg)), -1.0, 1e-12);
  // Zero and constant images still give a unit vector.
  const Embedding flat = frs.embed(ImageTensor(Tensor({3, 16, 16}, 0.3)));
  EXPECT_NEAR(similarity(flat, flat), 1.0, 1e-12);
}

TEST(Backends, SimilarityIsSymmetric) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    Embedding a(random_tensor({64}, rng).vec()), b(random_tensor({64}, rng).vec());
    EXPECT_DOUBLE_EQ(similarity(a, b), similarity(b, a));
  }
}

TEST(Backends, FrsIgnoresGlobalBrightnessOffset) {
  std::mt19937_64 rng(6);
  const auto& frs = *toy().frs;
  const Tensor x = random_tensor({3, 16, 16}, rng, -0.5, 0.5);
  Tensor y = x;
  for (auto& v : y.vec()) v += 0.2;
  EXPECT_NEAR(similarity(frs.embed(ImageTensor(x)), frs.embed(ImageTensor(y))), 1.0, 1e-12);
}

TEST(Backends, PerceptualFeaturesAreLipschitz) {
  std::mt19937_64 rng(7);
  const auto& p = *toy().perceptual;
  const Tensor x = random_tensor({3, 16, 16}, rng, -0.8, 0.8);
  const auto fx = p.features(ImageTensor(x));
  ASSERT_EQ(fx.size(), 3u);
  EXPECT_EQ(fx[0].shape(), (Shape{8, 8, 8}));
  EXPECT_EQ(fx[2].shape(), (Shape{16, 2, 2}));
  const Tensor dir = random_tensor({3, 16, 16}, rng);
  double prev_ratio = -1;
  for (double eps : {1e-2, 1e-3, 1e-4}) {
    const auto fy = p.features(ImageTensor(x + dir * eps));
    double d = 0;
    for (std::size_t s = 0; s < 3; ++s) d += squared_norm(fy[s].tensor() - fx[s].tensor());
    const double ratio = std::sqrt(d) / eps;
    EXPECT_LT(ratio, 1e3);
    if (prev_ratio > 0) EXPECT_NEAR(ratio / prev_ratio, 1.0, 0.2);
    prev_ratio = ratio;
  }
  EXPECT_EQ(p.features(ImageTensor(x))[1].tensor(), fx[1].tensor());
}

TEST(Backends, DiscriminatorInputGradientMatchesFiniteDifferences) {
  auto d = make_discriminator(toy().config, 3);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor({1, 3, 16, 16}, rng, -0.9, 0.9);
    auto f = [&](ad::Tape& t, const ad::Var& v) { return ad::sum(d->logit(t, v)); };
    EXPECT_LT(sfdm::testing::grad_rel_error(f, x), 1e-3);
    // The in-graph gradient norm equals the tape gradient norm.
    ad::Tape t;
    auto out = d->logit_with_input_gradient(t, t.constant(x));
    const Tensor g = sfdm::testing::analytic_grad(f, x);
    EXPECT_NEAR(out.grad_sq_norm.value()[0], squared_norm(g), 1e-10 * std::max(1.0, squared_norm(g)));
  }
}

TEST(Backends, DiscriminatorLearnsSeparableSets) {
  auto d = make_discriminator(toy().config, 4);
  std::mt19937_64 rng(9);
  Tensor real = random_tensor({8, 3, 16, 16}, rng, 0.0, 0.8);
  Tensor fake = random_tensor({8, 3, 16, 16}, rng, -0.8, 0.0);
  for (int step = 0; step < 100; ++step) {
    ad::Tape t;
    for (Parameter* p : d->parameters()) p->zero_grad();
    Var loss = ad::add(ad::mean(ad::softplus(ad::scale(d->logit(t, t.constant(real)), -1))),
                       ad::mean(ad::softplus(d->logit(t, t.constant(fake)))));
    t.backward(loss);
    for (Parameter* p : d->parameters()) p->value -= p->grad * 0.05;
  }
  ad::Tape t;
  EXPECT_GT(d->logit(t, t.constant(real)).value().mean(), d->logit(t, t.constant(fake)).value().mean());
}

TEST(Backends, PreprocessResizesAndNormalizes) {
  const auto& pre = *toy().preprocess;
  std::mt19937_64 rng(10);
  const Tensor conforming = random_tensor({3, 16, 16}, rng);
  EXPECT_EQ(pre(conforming).tensor(), conforming);
  EXPECT_EQ(pre(random_tensor({3, 20, 20}, rng)).shape(), (Shape{3, 16, 16}));
  const ImageTensor eight_bit = pre(Tensor({3, 16, 16}, 255.0));
  EXPECT_DOUBLE_EQ(eight_bit.tensor().min(), 1.0);
  EXPECT_THROW(pre(Tensor({1, 16, 16})), DecodeError);
  EXPECT_THROW(pre(Tensor({3, 16, 16}, -7.0)), DecodeError);
  ResizePreprocessor ref(256);
  EXPECT_EQ(ref(Tensor({3, 512, 512}, 0.1)).shape(), (Shape{3, 256, 256}));
}

TEST(Backends, ReferenceScaleIsRejectedByToyBackends) {
  EXPECT_THROW(make_toy_backends(BackendConfig::reference()), ConfigError);
}

TEST(Backends, FrozenDigestIsStable) {
  const auto b1 = make_toy_backends(BackendConfig::toy());
  EXPECT_EQ(b1.frozen_digest(), toy().frozen_digest());
  auto cfg = BackendConfig::toy();
  cfg.seed = 8;
  EXPECT_NE(make_toy_backends(cfg).frozen_digest(), b1.frozen_digest());
}
