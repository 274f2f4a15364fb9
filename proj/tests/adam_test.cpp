#include "radflow/adam.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

namespace radflow {
namespace {

TEST(AdamTest, ZeroGradientLeavesParamsAndDecaysMoments) {
  std::vector<double> params = {1.0, -2.0};
  AdamState state(2);
  state.first_moment = {0.5, -0.5};
  state.second_moment = {0.25, 0.25};
  const std::vector<double> grads = {0.0, 0.0};
  // The update direction is the decayed first moment, so params only stay
  // put when the moments are already zero.
  AdamState fresh(2);
  std::vector<double> untouched = params;
  adam_step(untouched, grads, fresh);
  EXPECT_EQ(untouched, params);
  EXPECT_EQ(fresh.step, 1u);

  adam_step(params, grads, state);
  EXPECT_DOUBLE_EQ(state.first_moment[0], 0.45);
  EXPECT_DOUBLE_EQ(state.second_moment[0], 0.25 * 0.999);
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  // m = 0.1, v = 0.001; bias corrected m_hat = 1, v_hat = 1
  // step = lr * 1 / (1 + 1e-8)
  std::vector<double> params = {0.0};
  AdamState state(1, 0.001);
  const std::vector<double> grads = {1.0};
  adam_step(params, grads, state);
  EXPECT_NEAR(params[0], -0.001 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamTest, ConvergesOnScalarQuadratic) {
  std::vector<double> x = {0.0};
  AdamState state(1, 0.05);
  for (int i = 0; i < 500; ++i) {
    const std::vector<double> g = {2.0 * (x[0] - 2.0)};
    adam_step(x, g, state);
  }
  EXPECT_LT(std::abs(x[0] - 2.0), 0.01);
}

TEST(AdamTest, RejectsNonFiniteGradient) {
  std::vector<double> params = {1.0, 2.0};
  AdamState state(2);
  const std::vector<double> grads = {0.5, std::numeric_limits<double>::quiet_NaN()};
  EXPECT_THROW(adam_step(params, grads, state), NumericFault);
  EXPECT_EQ(params, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(state.step, 0u);
  EXPECT_EQ(state.first_moment, (std::vector<double>{0.0, 0.0}));
}

TEST(AdamTest, MisalignedStateFaults) {
  std::vector<double> params = {1.0, 2.0};
  AdamState state(3);
  const std::vector<double> grads = {0.0, 0.0};
  EXPECT_THROW(adam_step(params, grads, state), StructuralFault);
}

}  // namespace
}  // namespace radflow
