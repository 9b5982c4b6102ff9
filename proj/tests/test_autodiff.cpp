#include <gtest/gtest.h>

#include "sfdm/error.hpp"
#include "sfdm/nn.hpp"
#include "test_util.hpp"

using namespace sfdm;
using sfdm::testing::grad_rel_error;
using sfdm::testing::random_tensor;
using sfdm::testing::weighted_sum;

namespace {

struct OpCase {
  const char* name;
  Shape shape;
  sfdm::testing::ScalarFn fn;
};

std::shared_ptr<const Tensor> fixed(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return std::make_shared<const Tensor>(random_tensor(s, rng));
}

}  // namespace

TEST(Autodiff, ElementwiseAndReductionGradients) {
  std::mt19937_64 rng(1);
  const Tensor other = random_tensor({2, 3, 4}, rng, 0.5, 1.5);
  std::vector<OpCase> cases = {
      {"add", {2, 3, 4}, [&](ad::Tape& t, const ad::Var& x) { return weighted_sum(ad::add(x, t.constant(other))); }},
      {"sub", {2, 3, 4}, [&](ad::Tape& t, const ad::Var& x) { return weighted_sum(ad::sub(t.constant(other), x)); }},
      {"mul", {2, 3, 4}, [&](ad::Tape& t, const ad::Var& x) { return weighted_sum(ad::mul(x, x)); }},
      {"div", {2, 3, 4}, [&](ad::Tape& t, const ad::Var& x) { return weighted_sum(ad::div(x, t.constant(other))); }},
      {"div_den", {2, 3, 4},
       [&](ad::Tape& t, const ad::Var& x) { return weighted_sum(ad::div(t.constant(other), ad::add_scalar(x, 3.0))); }},
      {"scale", {2, 3, 4}, [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::scale(x, -2.5)); }},
      {"square", {2, 3, 4}, [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::square(x)); }},
      {"tanh", {2, 3, 4}, [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::tanh(x)); }},
      {"softplus", {2, 3, 4}, [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::softplus(ad::scale(x, 5))); }},
      {"pow", {2, 3, 4},
       [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::pow_scalar(ad::add_scalar(x, 2.0), 0.7)); }},
      {"mean", {2, 3, 4}, [](ad::Tape&, const ad::Var& x) { return ad::mean(ad::square(x)); }},
      {"mean_per_sample", {2, 3, 4},
       [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::mean_per_sample(ad::square(x))); }},
      {"sum_per_sample", {2, 3, 4}, [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::sum_per_sample(x)); }},
      {"mean_spatial", {2, 3, 2, 2}, [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::mean_spatial(x)); }},
      {"narrow", {2, 5, 3}, [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::narrow(x, 1, 1, 3)); }},
      {"concat", {2, 2, 3},
       [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::concat_channels(x, ad::square(x))); }},
      {"reshape", {2, 6}, [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::reshape(ad::tanh(x), {3, 4})); }},
  };
  for (const auto& c : cases) {
    const Tensor x = random_tensor(c.shape, rng);
    EXPECT_LT(grad_rel_error(c.fn, x), 1e-6) << c.name;
  }
}

TEST(Autodiff, LinearAlgebraGradients) {
  std::mt19937_64 rng(2);
  const Tensor b = random_tensor({4, 3}, rng);
  const Tensor row = random_tensor({3}, rng);
  auto w = fixed({5, 4}, 3);
  std::vector<OpCase> cases = {
      {"matmul_left", {2, 4}, [&](ad::Tape& t, const ad::Var& x) { return weighted_sum(ad::matmul(x, t.constant(b))); }},
      {"matmul_right", {4, 3},
       [&](ad::Tape& t, const ad::Var& x) { return weighted_sum(ad::matmul(t.constant(b.reshaped({3, 4})), x)); }},
      {"transpose", {2, 4}, [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::transpose(x)); }},
      {"add_rowvec", {2, 3},
       [&](ad::Tape& t, const ad::Var& x) { return weighted_sum(ad::square(ad::add_rowvec(x, t.constant(row)))); }},
      {"matmul_fixed", {2, 4}, [&](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::matmul_fixed(x, w)); }},
      {"rowwise_dot", {2, 4}, [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::rowwise_dot(x, ad::tanh(x))); }},
      {"l2_normalize", {3, 5}, [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::l2_normalize_rows(x)); }},
  };
  for (const auto& c : cases) {
    const Tensor x = random_tensor(c.shape, rng);
    EXPECT_LT(grad_rel_error(c.fn, x), 1e-6) << c.name;
  }
}

TEST(Autodiff, ImageOpGradients) {
  std::mt19937_64 rng(4);
  const Tensor weight = random_tensor({3, 2, 3, 3}, rng);
  const Tensor bias = random_tensor({3}, rng);
  const Tensor alpha = random_tensor({2}, rng, 0.1, 0.4);
  auto kernel = fixed({3, 3}, 5);
  std::vector<OpCase> cases = {
      {"conv2d_x", {2, 2, 5, 5},
       [&](ad::Tape& t, const ad::Var& x) {
         ad::Var b = t.constant(bias);
         return weighted_sum(ad::conv2d(x, t.constant(weight), &b, 2, 1));
       }},
      {"conv2d_w", {3, 2, 3, 3},
       [&](ad::Tape& t, const ad::Var& w) {
         Tensor img = Tensor({1, 2, 4, 4});
         for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::sin(0.7 * static_cast<double>(i));
         return weighted_sum(ad::conv2d(t.constant(img), w, nullptr, 1, 1));
       }},
      {"conv2d_bias", {3},
       [&](ad::Tape& t, const ad::Var& b) {
         return weighted_sum(ad::square(ad::conv2d(t.constant(Tensor({1, 2, 4, 4}, 0.3)), t.constant(weight), &b, 1, 0)));
       }},
      {"depthwise", {1, 2, 5, 5}, [&](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::depthwise_conv_valid(x, kernel)); }},
      {"avg_pool2", {1, 2, 4, 4}, [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::avg_pool2(x)); }},
      {"normalize_channels", {2, 3, 2, 2},
       [](ad::Tape&, const ad::Var& x) { return weighted_sum(ad::normalize_channels(x)); }},
      {"prelu_x", {1, 2, 3, 3},
       [&](ad::Tape& t, const ad::Var& x) { return weighted_sum(ad::prelu(x, t.constant(alpha))); }},
      {"prelu_alpha", {2},
       [](ad::Tape& t, const ad::Var& a) {
         Tensor img({1, 2, 2, 2});
         for (std::size_t i = 0; i < img.size(); ++i) img[i] = (i % 3 == 0 ? 1.0 : -1.0) * (0.2 + 0.1 * i);
         return weighted_sum(ad::prelu(t.constant(img), a));
       }},
  };
  for (const auto& c : cases) {
    const Tensor x = random_tensor(c.shape, rng);
    EXPECT_LT(grad_rel_error(c.fn, x), 1e-6) << c.name;
  }
}

TEST(Autodiff, BatchNormTrainingGradient) {
  std::mt19937_64 rng(6);
  Parameter rm{"rm", Tensor({2}), {}, false}, rv{"rv", Tensor({2}, 1.0), {}, false};
  const Tensor gamma = random_tensor({2}, rng, 0.5, 1.5), beta = random_tensor({2}, rng);
  auto f = [&](ad::Tape& t, const ad::Var& x) {
    return weighted_sum(ad::batch_norm(x, t.constant(gamma), t.constant(beta), {&rm, &rv}, true, 0.1));
  };
  EXPECT_LT(grad_rel_error(f, random_tensor({2, 2, 3, 3}, rng)), 1e-5);
  auto g = [&](ad::Tape& t, const ad::Var& x) {
    return weighted_sum(ad::batch_norm(x, t.constant(gamma), t.constant(beta), {&rm, &rv}, false, 0.1));
  };
  EXPECT_LT(grad_rel_error(g, random_tensor({2, 2, 3, 3}, rng)), 1e-6);
}

TEST(Autodiff, BatchNormRunningStatistics) {
  Parameter rm{"rm", Tensor({1}), {}, false}, rv{"rv", Tensor({1}, 1.0), {}, false};
  ad::Tape t;
  Tensor x({2, 1, 1, 2}, std::vector<double>{1, 2, 3, 4});
  ad::batch_norm(t.constant(x), t.constant(Tensor({1}, 1.0)), t.constant(Tensor({1})), {&rm, &rv}, true, 0.1);
  EXPECT_NEAR(rm.value[0], 0.25, 1e-12);
  // unbiased variance of {1,2,3,4} = 5/3
  EXPECT_NEAR(rv.value[0], 0.9 + 0.1 * 5.0 / 3.0, 1e-12);
}

TEST(Autodiff, ParameterGradientsAccumulateAcrossUses) {
  Parameter p{"p", Tensor({2}, std::vector<double>{1.5, -2.0}), {}};
  ad::Tape t;
  ad::Var a = t.parameter(p);
  ad::Var b = t.parameter(p);
  t.backward(ad::sum(ad::mul(a, b)));
  EXPECT_DOUBLE_EQ(p.grad[0], 3.0);
  EXPECT_DOUBLE_EQ(p.grad[1], -4.0);
}

TEST(Autodiff, BuffersReceiveNoGradient) {
  Parameter buf{"b", Tensor({2}, 1.0), {}, false};
  ad::Tape t;
  ad::Var v = t.parameter(buf);
  EXPECT_FALSE(t.requires_grad(v));
  t.backward(ad::sum(v));
  EXPECT_TRUE(buf.grad.empty());
}

TEST(Autodiff, BackwardRequiresScalarRoot) {
  ad::Tape t;
  ad::Var v = t.variable(Tensor({3}, 1.0));
  EXPECT_THROW(t.backward(v), ShapeMismatch);
}

TEST(Autodiff, SoftplusIsStableForLargeInputs) {
  ad::Tape t;
  ad::Var v = ad::softplus(t.constant(Tensor({3}, std::vector<double>{-800, 0, 800})));
  EXPECT_NEAR(v.value()[0], 0.0, 1e-300);
  EXPECT_NEAR(v.value()[1], std::log(2.0), 1e-15);
  EXPECT_NEAR(v.value()[2], 800.0, 1e-12);
}

TEST(Autodiff, ConvMatchesNaiveLoop) {
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({1, 2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng);
  ad::Tape t;
  const Tensor y = ad::conv2d(t.constant(x), t.constant(w), nullptr, 2, 1).value();
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 3}));
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < 2; ++c)
          for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
              const int ii = static_cast<int>(2 * i) + a - 1, jj = static_cast<int>(2 * j) + b - 1;
              if (ii < 0 || jj < 0 || ii >= 5 || jj >= 5) continue;
              s += w[((o * 2 + c) * 3 + a) * 3 + b] * x[(c * 5 + ii) * 5 + jj];
            }
        EXPECT_NEAR(y[(o * 3 + i) * 3 + j], s, 1e-12);
      }
}

TEST(Autodiff, ResNetIrBlockGradient) {
  std::mt19937_64 init(9);
  nn::ResNetIRBlock block("blk", 2, 3, 2, init);
  std::mt19937_64 rng(10);
  auto f = [&](ad::Tape& t, const ad::Var& x) { return weighted_sum(block.forward(t, x, false)); };
  EXPECT_LT(grad_rel_error(f, random_tensor({1, 2, 4, 4}, rng)), 1e-3);
  ad::Tape t;
  EXPECT_EQ(block.forward(t, t.constant(Tensor({1, 2, 8, 8})), false).shape(), (Shape{1, 3, 4, 4}));
}

TEST(Autodiff, ResNetIrBlockIdentityWithZeroWeights) {
  std::mt19937_64 init(11);
  nn::ResNetIRBlock block("blk", 3, 3, 1, init);
  nn::ParameterList ps;
  block.collect(ps);
  for (Parameter* p : ps)
    if (p->trainable && p->name.find("conv") != std::string::npos) p->value = Tensor(p->value.shape());
  EXPECT_FALSE(block.has_projection());
  std::mt19937_64 rng(12);
  const Tensor x = random_tensor({1, 3, 4, 4}, rng);
  ad::Tape t;
  EXPECT_LT(max_abs_diff(block.forward(t, t.constant(x), false).value(), x), 1e-12);
}
