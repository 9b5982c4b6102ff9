#include <gtest/gtest.h>

#include <limits>

#include "sfdm/error.hpp"
#include "sfdm/tensor.hpp"

using namespace sfdm;

TEST(Tensor, ConstructionAndShape) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_DOUBLE_EQ(t.sum(), 9.0);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeMismatch);
  EXPECT_EQ(shape_str({3, 16, 16}), "3x16x16");
}

TEST(Tensor, ArithmeticRequiresMatchingShapes) {
  Tensor a({2}, 1.0), b({3}, 1.0);
  EXPECT_THROW(a += b, ShapeMismatch);
  Tensor c = Tensor({2}, 2.0) - Tensor({2}, 0.5);
  EXPECT_DOUBLE_EQ(c[1], 1.5);
  EXPECT_DOUBLE_EQ(max_abs_diff(c * 2.0, Tensor({2}, 3.0)), 0.0);
}

TEST(Tensor, StackUnstackRoundTrip) {
  Tensor a({2, 2}, std::vector<double>{1, 2, 3, 4}), b({2, 2}, std::vector<double>{5, 6, 7, 8});
  Tensor s = stack({a, b});
  EXPECT_EQ(s.shape(), (Shape{2, 2, 2}));
  EXPECT_EQ(unstack(s, 1), b);
  EXPECT_THROW(stack({a, Tensor({3})}), ShapeMismatch);
}

TEST(Tensor, FinitenessAndReductions) {
  Tensor t({3}, std::vector<double>{-1, 2, 0.5});
  EXPECT_TRUE(t.all_finite());
  EXPECT_DOUBLE_EQ(t.min(), -1);
  EXPECT_DOUBLE_EQ(t.max(), 2);
  EXPECT_NEAR(t.mean(), 0.5, 1e-15);
  t[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  EXPECT_DOUBLE_EQ(dot(Tensor({2}, 2.0), Tensor({2}, 3.0)), 12.0);
}
