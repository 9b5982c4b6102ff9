#include <gtest/gtest.h>

#include <cmath>

#include "sfdm/losses.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace sfdm;
using sfdm::oracles::naive_ms_ssim;
using sfdm::testing::grad_rel_error;
using sfdm::testing::random_tensor;

namespace {

const Backends& toy() {
  static const Backends b = make_toy_backends(BackendConfig::toy());
  return b;
}

Tensor batch1(const Tensor& t) { return stack({t}); }

Tensor correlated(const Tensor& x, std::mt19937_64& rng, double amp) {
  Tensor n = random_tensor(x.shape(), rng, -amp, amp);
  Tensor y = x + n;
  for (auto& v : y.vec()) v = std::clamp(v, -1.0, 1.0);
  return y;
}

}  // namespace

TEST(Losses, L2) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({3, 16, 16}, rng);
  EXPECT_EQ(l2_loss(ImageTensor(x), ImageTensor(x)), 0.0);
  Tensor shifted = Tensor({3, 4, 4}, 0.2);
  EXPECT_NEAR(l2_loss(ImageTensor(shifted), ImageTensor(Tensor({3, 4, 4}, 0.1))), 0.01, 1e-15);
  for (int i = 0; i < 20; ++i) {
    const Tensor a = random_tensor({3, 16, 16}, rng), b = random_tensor({3, 16, 16}, rng);
    double s = 0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    EXPECT_NEAR(l2_loss(ImageTensor(a), ImageTensor(b)), s / a.size(), 1e-9);
  }
  EXPECT_THROW(l2_loss(ImageTensor(Tensor({3, 4, 4})), ImageTensor(Tensor({3, 8, 8}))), ShapeMismatch);
}

TEST(Losses, MsSsimMatchesIndependentImplementation) {
  std::mt19937_64 rng(2);
  const MsSsimConfig cfg;
  for (int i = 0; i < 20; ++i) {
    const Tensor a = random_tensor({3, 16, 16}, rng);
    const Tensor b = i % 2 ? correlated(a, rng, 0.3) : random_tensor({3, 16, 16}, rng);
    const double got = ms_ssim_loss(ImageTensor(a), ImageTensor(b), cfg);
    EXPECT_NEAR(got, 1.0 - naive_ms_ssim(a, b, 3, 3, 1.0), 1e-9);
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 2.0);
  }
  // Reference parameters on a larger image.
  const Tensor a = random_tensor({3, 176, 176}, rng);
  const Tensor b = correlated(a, rng, 0.2);
  EXPECT_NEAR(ms_ssim_loss(ImageTensor(a), ImageTensor(b), MsSsimConfig::reference()),
              1.0 - naive_ms_ssim(a, b, 5, 11, 1.5), 1e-9);
}

TEST(Losses, MsSsimIdentityAndScalePrecondition) {
  std::mt19937_64 rng(3);
  const ImageTensor x(random_tensor({3, 16, 16}, rng));
  EXPECT_NEAR(ms_ssim_loss(x, x, MsSsimConfig{}), 0.0, 1e-12);
  EXPECT_THROW(ms_ssim_loss(x, x, MsSsimConfig{5, 3, 1.0}), TooSmallForScales);
  EXPECT_THROW(ms_ssim_loss(x, x, MsSsimConfig::reference()), TooSmallForScales);
}

TEST(Losses, LpipsMatchesStageLoopAndIsMonotoneInNoise) {
  std::mt19937_64 rng(4);
  const auto& net = *toy().perceptual;
  const Tensor x = random_tensor({3, 16, 16}, rng, -0.7, 0.7);
  EXPECT_EQ(lpips_loss(ImageTensor(x), ImageTensor(x), net), 0.0);
  const Tensor dir = random_tensor({3, 16, 16}, rng, -1, 1);
  double prev = 0;
  for (int k = 1; k <= 10; ++k) {
    const Tensor y = x + dir * (0.03 * k);
    const double v = lpips_loss(ImageTensor(y), ImageTensor(x), net);
    EXPECT_GT(v, prev);
    prev = v;
    const auto fy = net.features(ImageTensor(y)), fx = net.features(ImageTensor(x));
    double oracle = 0;
    for (std::size_t s = 0; s < fy.size(); ++s) {
      double acc = 0;
      for (std::size_t i = 0; i < fy[s].tensor().size(); ++i) {
        const double d = fy[s].tensor()[i] - fx[s].tensor()[i];
        acc += d * d;
      }
      oracle += acc / fy[s].tensor().size();
    }
    EXPECT_NEAR(v, oracle, 1e-9);
  }
}

TEST(Losses, IdentityLoss) {
  std::mt19937_64 rng(5);
  const auto& frs = *toy().frs;
  const Tensor a = random_tensor({3, 16, 16}, rng), b = random_tensor({3, 16, 16}, rng);
  EXPECT_NEAR(id_loss(ImageTensor(a), ImageTensor(a), frs), 0.0, 1e-12);
  // The toy FRS is odd-symmetric, so a negated image has the antipodal embedding.
  EXPECT_NEAR(id_loss(ImageTensor(a * -1.0), ImageTensor(a), frs), 2.0, 1e-12);
  const double ext = 1.0 - similarity(frs.embed(ImageTensor(a)), frs.embed(ImageTensor(b)));
  EXPECT_NEAR(id_loss(ImageTensor(a), ImageTensor(b), frs), ext, 1e-9);
}

TEST(Losses, InverseIdentityHinge) {
  EXPECT_EQ(inverse_id_from_similarity(-0.5, -0.5), 0.0);
  EXPECT_DOUBLE_EQ(inverse_id_from_similarity(1.0, -0.5), 1.5);
  EXPECT_EQ(inverse_id_from_similarity(-0.9, -0.5), 0.0);
  std::mt19937_64 rng(6);
  const auto& frs = *toy().frs;
  const ImageTensor a(random_tensor({3, 16, 16}, rng)), b(random_tensor({3, 16, 16}, rng));
  EXPECT_NEAR(inverse_id_loss(a, a, -0.5, frs), 1.5, 1e-12);
  EXPECT_NEAR(inverse_id_loss(a, ImageTensor(a.tensor() * -1.0), -0.5, frs), 0.0, 1e-12);
  EXPECT_NEAR(inverse_id_loss(a, b, -0.5, frs), inverse_id_from_similarity(similarity(frs.embed(a), frs.embed(b)), -0.5),
              1e-9);
}

TEST(Losses, FeatureLoss) {
  std::mt19937_64 rng(7);
  const Tensor a = random_tensor({8, 8, 8}, rng), b = random_tensor({8, 8, 8}, rng);
  EXPECT_EQ(feature_loss(FeatureMap(a), FeatureMap(a)), 0.0);
  const double base = feature_loss(FeatureMap(a), FeatureMap(b));
  const Tensor scaled = b + (a - b) * std::sqrt(2.0);
  EXPECT_NEAR(feature_loss(FeatureMap(scaled), FeatureMap(b)), 2 * base, 1e-12);
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(base, s / a.size(), 1e-9);
}

TEST(Losses, AdversarialGeneratorLoss) {
  EXPECT_NEAR(neg_log_sigmoid(0.0), std::log(2.0), 1e-15);
  double prev = neg_log_sigmoid(0.0);
  for (double x = 1; x <= 50; x += 1) {
    const double v = neg_log_sigmoid(x);
    EXPECT_LT(v, prev);
    EXPECT_GE(v, 0.0);
    prev = v;
  }
  const long double exact = 30.0L + std::log1p(std::exp(-30.0L));
  EXPECT_NEAR(neg_log_sigmoid(-30.0), static_cast<double>(exact), 1e-12);
  EXPECT_TRUE(std::isfinite(neg_log_sigmoid(-1000.0)));
  auto d = make_discriminator(toy().config, 1);
  std::mt19937_64 rng(8);
  const ImageTensor x(random_tensor({3, 16, 16}, rng));
  EXPECT_NEAR(adversarial_generator_loss(x, *d), neg_log_sigmoid(d->logit(x)), 1e-12);
}

TEST(Losses, DiscriminatorLossAndPenalty) {
  auto d = make_discriminator(toy().config, 2);
  std::mt19937_64 rng(9);
  const ImageTensor gt(random_tensor({3, 16, 16}, rng)), out(random_tensor({3, 16, 16}, rng));
  {
    auto zero = make_discriminator(toy().config, 2);
    for (Parameter* p : zero->parameters()) p->value = Tensor(p->value.shape());
    EXPECT_NEAR(discriminator_loss(gt, out, 0.0, *zero), 2 * std::log(2.0), 1e-12);
  }
  const double gamma = 10.0;
  const double base = neg_log_sigmoid(d->logit(gt)) + neg_log_sigmoid(-d->logit(out));
  // Finite-difference gradient of the logit with respect to the real image.
  Tensor g(gt.shape());
  Tensor xp = gt.tensor();
  const double h = 1e-5;
  for (std::size_t i = 0; i < xp.size(); ++i) {
    const double o = xp[i];
    xp[i] = o + h;
    const double fp = d->logit(ImageTensor(xp));
    xp[i] = o - h;
    const double fm = d->logit(ImageTensor(xp));
    xp[i] = o;
    g[i] = (fp - fm) / (2 * h);
  }
  const double penalty = discriminator_loss(gt, out, gamma, *d) - base;
  const double fd_penalty = gamma / 2 * squared_norm(g);
  EXPECT_NEAR(penalty / fd_penalty, 1.0, 1e-2);
}

TEST(Losses, DiscriminatorLossLeavesGeneratorUntouched) {
  DemorpherModel model(toy().config, ModelConfig{});
  auto d = make_discriminator(toy().config, 3);
  std::mt19937_64 rng(10);
  const Tensor docs = random_tensor({2, 3, 16, 16}, rng), refs = random_tensor({2, 3, 16, 16}, rng);
  for (Parameter* p : model.parameters()) p->zero_grad();
  ad::Tape tape;
  const DemorphTrace tr = model.forward(tape, toy(), docs, refs, true);
  auto terms = discriminator_per_sample(tape, docs, tr.image.value(), 10.0, *d);
  tape.backward(ad::mean(terms.total));
  for (Parameter* p : model.parameters()) EXPECT_EQ(squared_norm(p->grad), 0.0) << p->name;
  double disc_grad = 0;
  for (Parameter* p : d->parameters()) disc_grad += squared_norm(p->grad);
  EXPECT_GT(disc_grad, 0.0);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  const auto& b = toy();
  auto d = make_discriminator(b.config, 4);
  const MsSsimConfig ms;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor gt = batch1(random_tensor({3, 16, 16}, rng, -0.8, 0.8));
    const Tensor ref = batch1(random_tensor({3, 16, 16}, rng, -0.8, 0.8));
    const Tensor out = batch1(correlated(unstack(gt, 0), rng, 0.3));
    const Tensor fo = batch1(random_tensor({8, 8, 8}, rng)), fg = batch1(random_tensor({8, 8, 8}, rng));
    std::vector<std::pair<const char*, sfdm::testing::ScalarFn>> terms = {
        {"l2", [&](Tape& t, const Var& x) { return ad::sum(l2_per_sample(x, t.constant(gt))); }},
        {"ms_ssim", [&](Tape& t, const Var& x) { return ad::sum(ms_ssim_loss_per_sample(x, t.constant(gt), ms)); }},
        {"lpips", [&](Tape& t, const Var& x) { return ad::sum(lpips_per_sample(t, x, t.constant(gt), *b.perceptual)); }},
        {"id", [&](Tape& t, const Var& x) { return ad::sum(id_per_sample(t, x, t.constant(gt), *b.frs)); }},
        // margin below -1 keeps the hinge away from its kink
        {"inv_id", [&](Tape& t, const Var& x) { return ad::sum(inverse_id_per_sample(t, x, t.constant(ref), -1.5, *b.frs)); }},
        {"adv", [&](Tape& t, const Var& x) { return ad::sum(adversarial_per_sample(t, x, *d)); }},
    };
    for (const auto& [name, fn] : terms) EXPECT_LT(grad_rel_error(fn, out), 1e-3) << name << " trial " << trial;
    auto feat = [&](Tape& t, const Var& x) { return ad::sum(feature_per_sample(x, t.constant(fg))); };
    EXPECT_LT(grad_rel_error(feat, fo), 1e-3);
  }
}

TEST(Losses, PenaltyGradientInWeightsMatchesFiniteDifferences) {
  auto d = make_discriminator(toy().config, 5);
  std::mt19937_64 rng(12);
  const Tensor gt = batch1(random_tensor({3, 16, 16}, rng)), out = batch1(random_tensor({3, 16, 16}, rng));
  Parameter* w2 = d->parameters()[2];
  auto objective = [&]() {
    ad::Tape t;
    return ad::mean(discriminator_per_sample(t, gt, out, 10.0, *d).total).value()[0];
  };
  for (Parameter* p : d->parameters()) p->zero_grad();
  {
    ad::Tape t;
    t.backward(ad::mean(discriminator_per_sample(t, gt, out, 10.0, *d).total));
  }
  const Tensor analytic = w2->grad;
  Tensor numeric(analytic.shape());
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double o = w2->value[i];
    w2->value[i] = o + 1e-6;
    const double fp = objective();
    w2->value[i] = o - 1e-6;
    const double fm = objective();
    w2->value[i] = o;
    numeric[i] = (fp - fm) / 2e-6;
  }
  EXPECT_LT(std::sqrt(squared_norm(analytic - numeric) / squared_norm(numeric)), 1e-4);
}

TEST(Losses, CoefficientTableComposition) {
  const LossComponents ones{1, 1, 1, 1, 1, 1, 1};
  const auto m = compose(ones, LossWeights::morphed_pass());
  EXPECT_NEAR(m.im_composite, 3.2, 1e-12);
  EXPECT_NEAR(m.total, 3.91, 1e-12);
  const auto b = compose(ones, LossWeights::bona_fide_pass());
  EXPECT_NEAR(b.im_composite, 0.32, 1e-12);
  EXPECT_NEAR(b.total, 0.34, 1e-12);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0, 2);
  for (int i = 0; i < 100; ++i) {
    const LossComponents c{u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
    for (const auto& w : {LossWeights::morphed_pass(), LossWeights::bona_fide_pass()}) {
      const auto r = compose(c, w);
      EXPECT_NEAR(r.im_composite,
                  w.lambda_l2 * r.l2 + w.lambda_lpips * r.lpips + w.lambda_ms_ssim * r.ms_ssim + w.lambda_id * r.id,
                  1e-12);
      EXPECT_NEAR(r.total, r.im_composite + w.lambda_inv_id * r.inv_id + w.lambda_feat * r.feat + w.lambda_adv * r.adv,
                  1e-12);
    }
  }
}

namespace {

struct Fixture {
  ad::Tape tape;
  DemorphTrace trace;
};

GeneratorObjective objective_for(ad::Tape& tape, DemorphTrace& trace, const Tensor& out, const Tensor& f_out,
                                 const Tensor& gt, const Tensor& refs, const LossWeights& w, const Discriminator& d) {
  trace.image = tape.variable(out);
  trace.f_out = tape.variable(f_out);
  return generator_objective(tape, trace, gt, refs, w, MsSsimConfig{}, toy(), d);
}

}  // namespace

TEST(Losses, PerfectReconstructionLeavesOnlyAdversarialTerm) {
  std::mt19937_64 rng(14);
  auto d = make_discriminator(toy().config, 6);
  const Tensor gt = random_tensor({2, 3, 16, 16}, rng), refs = random_tensor({2, 3, 16, 16}, rng);
  const Tensor f_gt = toy().encoder->encode_batch(gt).second;
  ad::Tape tape;
  DemorphTrace tr;
  const auto w = LossWeights::bona_fide_pass();
  const auto obj = objective_for(tape, tr, gt, f_gt, gt, refs, w, *d);
  EXPECT_NEAR(obj.report.im_composite, 0.0, 1e-10);
  EXPECT_NEAR(obj.report.total, w.lambda_adv * obj.report.adv, 1e-10);
  EXPECT_NEAR(obj.total.value()[0], obj.report.total, 1e-10);
}

TEST(Losses, ObjectiveIsBatchMeanAndPermutationInvariant) {
  std::mt19937_64 rng(15);
  auto d = make_discriminator(toy().config, 7);
  const Tensor gt = random_tensor({3, 3, 16, 16}, rng), refs = random_tensor({3, 3, 16, 16}, rng);
  const Tensor out = random_tensor({3, 3, 16, 16}, rng), fo = random_tensor({3, 8, 8, 8}, rng);
  const auto w = LossWeights::morphed_pass();
  ad::Tape t1;
  DemorphTrace tr1;
  const double full = objective_for(t1, tr1, out, fo, gt, refs, w, *d).report.total;
  auto perm = [](const Tensor& x) { return stack({unstack(x, 2), unstack(x, 0), unstack(x, 1)}); };
  ad::Tape t2;
  DemorphTrace tr2;
  EXPECT_NEAR(objective_for(t2, tr2, perm(out), perm(fo), perm(gt), perm(refs), w, *d).report.total, full, 1e-12);
  double mean = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    ad::Tape t;
    DemorphTrace tr;
    auto one = [&](const Tensor& x) { return stack({unstack(x, i)}); };
    mean += objective_for(t, tr, one(out), one(fo), one(gt), one(refs), w, *d).report.total / 3;
  }
  EXPECT_NEAR(full, mean, 1e-12);
}

TEST(Losses, InverseIdentityAddsNoGradientInBonaFidePass) {
  std::mt19937_64 rng(16);
  auto d = make_discriminator(toy().config, 8);
  const Tensor gt = random_tensor({2, 3, 16, 16}, rng), refs = random_tensor({2, 3, 16, 16}, rng);
  const Tensor out = random_tensor({2, 3, 16, 16}, rng), fo = random_tensor({2, 8, 8, 8}, rng);
  auto grad_for = [&](double margin) {
    auto w = LossWeights::bona_fide_pass();
    w.margin_m = margin;
    ad::Tape t;
    DemorphTrace tr;
    auto obj = objective_for(t, tr, out, fo, gt, refs, w, *d);
    t.backward(obj.total);
    return t.grad(tr.image);
  };
  EXPECT_EQ(grad_for(-0.5), grad_for(-1.0));
}
