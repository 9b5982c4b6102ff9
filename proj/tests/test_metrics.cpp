#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "sfdm/dmad.hpp"
#include "sfdm/metrics.hpp"
#include "oracles.hpp"

using namespace sfdm;
using namespace sfdm::oracles;

TEST(Dmad, ClassifyUsesGreaterOrEqual) {
  EXPECT_EQ(classify(0.331, 0.331), ScoreLabel::BonaFide);
  EXPECT_EQ(classify(0.331 - 1e-9, 0.331), ScoreLabel::Morph);
  for (double tau : {-1.0, 0.0, 0.5, 1.0}) EXPECT_EQ(classify(1.0, tau), ScoreLabel::BonaFide);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 1000; ++i) {
    double a = u(rng), b = u(rng), tau = u(rng);
    if (a < b) std::swap(a, b);
    if (classify(b, tau) == ScoreLabel::BonaFide) EXPECT_EQ(classify(a, tau), ScoreLabel::BonaFide);
  }
}

TEST(Dmad, CalibrationExamples) {
  const auto t = calibrate_threshold({0.9, 0.8}, {0.1, 0.2}, 0.5);
  EXPECT_EQ(t.tau, 0.2);
  EXPECT_EQ(t.achieved_fmr, 0.5);
  EXPECT_EQ(t.achieved_tmr, 1.0);
  const auto sep = calibrate_threshold({0.7, 0.8, 0.9}, {0.1, 0.3, 0.2}, 0.01);
  EXPECT_GT(sep.tau, 0.3);
  EXPECT_LT(sep.tau, 0.7);
  EXPECT_EQ(sep.achieved_tmr, 1.0);
  const auto single = calibrate_threshold({0.9}, {0.4}, 0.5);
  EXPECT_GT(single.tau, 0.4);
  EXPECT_EQ(single.achieved_fmr, 0.0);
  EXPECT_THROW(calibrate_threshold({}, {0.1}, 0.1), EmptyScoreSet);
  EXPECT_THROW(calibrate_threshold({0.1}, {}, 0.1), EmptyScoreSet);
}

TEST(Dmad, CalibrationMatchesSweepOracleAndProperties) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> target(0.001, 0.6);
  for (int trial = 0; trial < 300; ++trial) {
    const auto mated = random_scores(rng, 1 + rng() % 40, 0.6);
    const auto non = random_scores(rng, 1 + rng() % 60, 0.0);
    const double fmr = target(rng);
    const auto t = calibrate_threshold(mated, non, fmr);
    // Oracle: every real tau is equivalent to the smallest observed score
    // at or above it, so scanning sorted scores plus "above everything" is exhaustive.
    std::vector<double> sweep = non;
    std::sort(sweep.begin(), sweep.end());
    double expected = std::nextafter(*std::max_element(non.begin(), non.end()), kInf);
    for (double c : sweep)
      if (naive_macer(non, c) <= fmr) {
        expected = c;
        break;
      }
    ASSERT_EQ(t.tau, expected);
    EXPECT_LE(naive_macer(non, t.tau), fmr);
    EXPECT_EQ(t.achieved_tmr, naive_macer(mated, t.tau));
    auto shuffled = non;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto doubled = shuffled;
    doubled.insert(doubled.end(), non.begin(), non.end());
    EXPECT_EQ(calibrate_threshold(mated, shuffled, fmr).tau, t.tau);
    EXPECT_EQ(calibrate_threshold(mated, doubled, fmr).tau, t.tau);
    EXPECT_GE(calibrate_threshold(mated, non, 0.001).tau, calibrate_threshold(mated, non, 0.5).tau);
  }
}

TEST(Metrics, DtiDnti) {
  const double tau = 0.331;
  EXPECT_NEAR(dti({tau, tau, tau}, tau), 0.0, 1e-15);
  EXPECT_NEAR(dti({tau + 0.1, tau - 0.1}, tau), 0.0, 1e-15);
  EXPECT_NEAR(dnti({tau - 0.3, tau - 0.3}, tau), -0.3, 1e-12);
  EXPECT_THROW(dnti({0.1}, tau, RestorationScenario::BonaFide), ScenarioNotApplicable);
  EXPECT_NO_THROW(dnti({0.1}, tau, RestorationScenario::Criminal));
  EXPECT_THROW(dti({}, tau), EmptyScoreSet);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto s = random_scores(rng, 1 + rng() % 50, 0.2);
    double acc = 0;
    for (double v : s) acc += v;
    EXPECT_NEAR(dti(s, tau), acc / s.size() - tau, 1e-12);
    EXPECT_NEAR(dnti(s, tau), acc / s.size() - tau, 1e-12);
  }
}

TEST(Metrics, ErrorRateExamples) {
  EXPECT_DOUBLE_EQ(macer({0.5, 0.2, 0.4}, 0.331), 2.0 / 3.0);
  EXPECT_EQ(macer({0.5, 0.2, 0.4}, -1.0), 1.0);
  EXPECT_EQ(macer({0.5, 0.2, 0.4}, std::nextafter(0.5, 1.0)), 0.0);
  EXPECT_EQ(bscer({0.9, 0.3}, 0.331), 0.5);
  EXPECT_EQ(bscer({0.9, 0.3}, -1.0), 0.0);
  const std::vector<double> x = {0.1, 0.4, 0.4, 0.7};
  for (double tau : {0.0, 0.1, 0.3, 0.4, 0.5, 0.8}) EXPECT_EQ(macer(x, tau) + bscer(x, tau), 1.0);
  EXPECT_THROW(macer({}, 0.0), EmptyScoreSet);
  EXPECT_THROW(bscer({}, 0.0), EmptyScoreSet);
}

TEST(Metrics, EerExamples) {
  EXPECT_EQ(eer({0.9, 0.8, 0.7}, {0.3, 0.2, 0.1}), 0.0);
  EXPECT_DOUBLE_EQ(eer({0.2, 0.5, 0.7}, {0.2, 0.5, 0.7}), 0.5);
  EXPECT_NEAR(eer({0.6, 0.4}, {0.5, 0.3}), grid_eer({0.6, 0.4}, {0.5, 0.3}), 1e-4);
  // Negating all scores and swapping roles keeps the crossing.
  EXPECT_NEAR(eer({0.6, 0.4}, {0.5, 0.3}), eer({-0.3, -0.5}, {-0.4, -0.6}), 1e-12);
}

TEST(Metrics, DetCurveShape) {
  const auto sep = det_curve({0.9, 0.8}, {0.1, 0.2});
  EXPECT_TRUE(std::any_of(sep.begin(), sep.end(), [](const DetPoint& p) { return p.macer == 0 && p.bscer == 0; }));
  const std::vector<double> same = {0.1, 0.3, 0.3, 0.6};
  for (const auto& p : det_curve(same, same)) EXPECT_EQ(p.macer + p.bscer, 1.0);
  EXPECT_EQ(det_curve({0.1, 0.2}, {0.2, 0.3}).size(), 5u);
}

TEST(Metrics, BscerAtMacerExamples) {
  EXPECT_EQ(bscer_at_macer({0.9, 0.8}, {0.1, 0.2}, 0.05), 0.0);
  EXPECT_EQ(bscer_at_macer({0.9, 0.8}, {0.1, 0.2}, 1.0), 0.0);
  EXPECT_EQ(bscer_at_macer({0.5, 0.1}, {0.9, 0.4}, 1.0), 0.0);
  EXPECT_EQ(bscer_at_macer({0.5, 0.1}, {0.9, 0.4}, 0.5), 0.5);
}

TEST(Metrics, BmsExamples) {
  EXPECT_EQ(bms({0.3, 0.5}, {0.5, 0.3}), 0.0);
  EXPECT_NEAR(bms({0.8, 0.9}, {0.1, 0.2}), 0.7, 1e-12);
  EXPECT_NEAR(bms({0.2}, {0.5, 0.7}), 0.4, 1e-12);
}

TEST(Metrics, RandomizedOracleEquivalence) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto b = random_scores(rng, 1 + rng() % 100, 0.4);
    const auto m = random_scores(rng, 1 + rng() % 100, 0.1);
    const auto det = det_curve(b, m);
    const auto cand = naive_candidates(b, m);
    ASSERT_EQ(det.size(), cand.size());
    for (std::size_t i = 0; i < det.size(); ++i) {
      ASSERT_EQ(det[i].tau, cand[i]);
      ASSERT_EQ(det[i].macer, naive_macer(m, cand[i]));
      ASSERT_EQ(det[i].bscer, naive_bscer(b, cand[i]));
      ASSERT_EQ(macer(m, cand[i]), naive_macer(m, cand[i]));
      ASSERT_EQ(bscer(b, cand[i]), naive_bscer(b, cand[i]));
      if (i) {
        ASSERT_LE(det[i].macer, det[i - 1].macer);
        ASSERT_GE(det[i].bscer, det[i - 1].bscer);
      }
    }
    for (double target : {0.01, 0.05, 0.1, 0.3, 1.0})
      ASSERT_EQ(bscer_at_macer(b, m, target), naive_bscer_at_macer(b, m, target));
    if (trial % 10 == 0) {
      const double e = eer(b, m);
      ASSERT_GE(e, 0.0);
      ASSERT_LE(e, 1.0);
      ASSERT_NEAR(e, grid_eer(b, m), 1e-4);
    }
    const double w = bms(b, m);
    ASSERT_NEAR(w, bms(m, b), 1e-12);
    ASSERT_GE(w, 0.0);
    const std::size_t n = 1 + rng() % 60;
    auto x = random_scores(rng, n, 0.3), y = random_scores(rng, n, 0.0);
    const double bx = bms(x, y);
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    double paired = 0;
    for (std::size_t i = 0; i < n; ++i) paired += std::abs(x[i] - y[i]);
    ASSERT_NEAR(bx, paired / n, 1e-9);
  }
}

TEST(Metrics, BmsMatchesTransportOracleAndTriangleInequality) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = random_scores(rng, 1 + rng() % 8, 0.3);
    const auto b = random_scores(rng, 1 + rng() % 8, 0.0);
    const auto c = random_scores(rng, 1 + rng() % 8, 0.1);
    ASSERT_NEAR(bms(a, b), transport_oracle(a, b), 1e-6);
    EXPECT_LE(bms(a, c), bms(a, b) + bms(b, c) + 1e-12);
  }
}

TEST(Metrics, MapExamples) {
  // One morph, one attempt, three FRSs: passes on two of them.
  const MapOutcomes one = {{{true, true, false}}};
  const auto m = map_matrix(one, 1, 3);
  EXPECT_EQ(m[0][0], 1.0);
  EXPECT_EQ(m[0][1], 1.0);
  EXPECT_EQ(m[0][2], 0.0);
  const MapOutcomes none(4, std::vector<std::vector<bool>>(3, std::vector<bool>(2, false)));
  for (const auto& row : map_matrix(none, 3, 2))
    for (double v : row) EXPECT_EQ(v, 0.0);
  const MapOutcomes all(4, std::vector<std::vector<bool>>(3, std::vector<bool>(2, true)));
  for (const auto& row : map_matrix(all, 3, 2))
    for (double v : row) EXPECT_EQ(v, 1.0);
  EXPECT_THROW(map_matrix({}, 1, 1), EmptyScoreSet);
}

TEST(Metrics, MapMatchesSubsetCountingOracle) {
  std::mt19937_64 rng(6);
  std::bernoulli_distribution coin(0.6);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 10, attempts = 1 + rng() % 4, frs = 1 + rng() % 4;
    MapOutcomes o(n, std::vector<std::vector<bool>>(attempts, std::vector<bool>(frs)));
    for (auto& a : o)
      for (auto& row : a)
        for (std::size_t c = 0; c < frs; ++c) row[c] = coin(rng);
    const auto got = map_matrix(o, attempts, frs);
    const auto want = map_counting(o, attempts, frs);
    for (std::size_t r = 1; r <= attempts; ++r)
      for (std::size_t c = 1; c <= frs; ++c) {
        ASSERT_EQ(got[r - 1][c - 1], want[r - 1][c - 1]);
        if (r > 1) ASSERT_LE(got[r - 1][c - 1], got[r - 2][c - 1]);
        if (c > 1) ASSERT_LE(got[r - 1][c - 1], got[r - 1][c - 2]);
      }
  }
}

TEST(Metrics, ScoreSetAndDd) {
  std::vector<ScoreRecord> recs(4);
  recs[0].label = ScoreLabel::BonaFide;
  recs[0].score = 0.9;
  recs[1].label = ScoreLabel::Morph;
  recs[1].score = 0.2;
  recs[1].score_gt = 0.7;
  recs[2].label = ScoreLabel::Morph;
  recs[2].score = 0.3;
  recs[2].score_gt = 0.6;
  recs[3].label = ScoreLabel::BonaFide;
  recs[3].score = 0.8;
  const auto s = ScoreSet::partition(recs);
  EXPECT_EQ(s.bona_scores(), (std::vector<double>{0.9, 0.8}));
  EXPECT_EQ(s.morph_scores(), (std::vector<double>{0.2, 0.3}));
  EXPECT_EQ(build_dd(recs), (std::vector<double>{0.7, 0.6}));
  EXPECT_TRUE(build_dd({}).empty());
}
