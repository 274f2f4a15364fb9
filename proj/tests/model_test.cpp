#include "radflow/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

#include "radflow/checkpoint.hpp"
#include "random_models.hpp"

namespace radflow {
namespace {

void randomize(FlowModel& model, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> normal(0.0, sd);
  for (auto& v : model.params()) v = normal(rng);
}

TEST(FlowModelTest, ZeroLayersIsStandardNormal) {
  const FlowModel model(2);
  EXPECT_NEAR(model.log_prob(std::vector<double>{0.0, 0.0}), -1.837877, 1e-6);
  EXPECT_NEAR(model.log_prob(std::vector<double>{1.0, -2.0}), -std::log(2 * std::numbers::pi) - 2.5, 1e-12);
}

TEST(FlowModelTest, ParameterCounts) {
  EXPECT_EQ(FlowModel::make(ModelKind::kRad, 2, 6, 8).param_count(), 618u);
  EXPECT_EQ(FlowModel::make(ModelKind::kRealNvp, 2, 6, 56).param_count(), 2034u);
  EXPECT_EQ(FlowModel::make(ModelKind::kRad, 2, 6, 8).rad_fold_count(), 6u);
}

TEST(FlowModelTest, AffineStackMatchesClosedForm) {
  // Two affine layers with s = log 2 and t = 1 on both coordinates push
  // x to z = 2x + 1, so log p(x) = log N(2x + 1) + 2 log 2.
  auto model = FlowModel::make(ModelKind::kRealNvp, 2, 2, 4);
  auto theta = model.params();
  for (auto& v : theta) v = 0.0;
  for (const auto& layer : model.layers()) {
    const auto& a = std::get<AffineCoupling>(layer);
    theta[a.scale_net().scale_index()] = 1.0;
    theta[a.scale_net().scale_index() - 1] = std::atanh(std::log(2.0));
    theta[a.shift_net().offset() + a.shift_net().weight_count() - 1] = 1.0;
  }
  const std::vector<double> x = {0.3, -0.8};
  const std::vector<double> z = {2 * x[0] + 1, 2 * x[1] + 1};
  const double expected = standard_normal_log_density<double>(z) + 2 * std::log(2.0);
  EXPECT_NEAR(model.log_prob(x), expected, 1e-12);
}

TEST(FlowModelTest, NonFiniteIntermediateReportsLayer) {
  auto model = FlowModel::make(ModelKind::kRealNvp, 2, 2, 4);
  for (auto& v : model.params()) v = 0.0;
  const auto& a = std::get<AffineCoupling>(model.layers()[0]);
  model.params()[a.scale_net().scale_index()] = 1.0;
  model.params()[a.scale_net().scale_index() - 1] = 5.0;
  try {
    model.log_prob(std::vector<double>{0.0, 1e308});
    FAIL() << "expected a numeric fault";
  } catch (const NumericFault& e) {
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
  }
}

TEST(BruteForceTest, SingleFoldHasExactlyOneComponent) {
  auto model = FlowModel::make(ModelKind::kRad, 2, 1, 4);
  std::mt19937_64 rng(1);
  randomize(model, rng, 0.5);
  for (const double x2 : {-5.0, -0.3, 0.0, 0.4, 3.0}) {
    const std::vector<double> x = {0.2, x2};
    EXPECT_NEAR(brute_force_log_prob(model, x), model.log_prob(x), 1e-9);
  }
}

TEST(BruteForceTest, UniformGatingOneLayer) {
  const auto model = FlowModel::make(ModelKind::kRad, 2, 1, 8);
  for (const double x2 : {-3.0, -1.0, 0.5, 2.0}) {
    const std::vector<double> x = {0.1, x2};
    EXPECT_NEAR(brute_force_log_prob(model, x), model.log_prob(x), 1e-9);
  }
}

TEST(BruteForceTest, MatchesDirectEvaluationOnRandomModels) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.0, 2.0);
  for (std::size_t layers = 1; layers <= 3; ++layers) {
    for (int m = 0; m < 5; ++m) {
      auto model = FlowModel::make(ModelKind::kRad, 2, layers, 6);
      randomize(model, rng, 0.6);
      for (int i = 0; i < 40; ++i) {
        const std::vector<double> x = {normal(rng), normal(rng)};
        EXPECT_NEAR(brute_force_log_prob(model, x), model.log_prob(x), 1e-9) << layers << " layers";
      }
    }
  }
}

TEST(BruteForceTest, MixedStack) {
  std::mt19937_64 rng(3);
  FlowModel model(2);
  model.add_rad_layer(alternate_split(0, 2), 5);
  model.add_affine_layer(alternate_split(1, 2), 5);
  model.add_rad_layer(alternate_split(1, 2), 5);
  randomize(model, rng, 0.5);
  std::normal_distribution<double> normal(0.0, 2.0);
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> x = {normal(rng), normal(rng)};
    EXPECT_NEAR(brute_force_log_prob(model, x), model.log_prob(x), 1e-9);
  }
}

TEST(BruteForceTest, KnotPointIsSingleTerm) {
  const auto model = FlowModel::make(ModelKind::kRad, 2, 1, 8);
  const double beta = std::log(2.0) + kBetaMin;
  for (const double x2 : {-beta, beta, 3 * beta, -3 * beta}) {
    const std::vector<double> x = {0.0, x2};
    EXPECT_NEAR(brute_force_log_prob(model, x), model.log_prob(x), 1e-9);
  }
}

TEST(BruteForceTest, PathOverflowFaults) {
  const auto model = FlowModel::make(ModelKind::kRad, 2, 11, 2);
  EXPECT_THROW(brute_force_log_prob(model, std::vector<double>{0.0, 0.0}), StructuralFault);
}

TEST(TotalMassTest, ZeroLayers) {
  EXPECT_NEAR(total_mass(FlowModel(2), Grid2D{}), 1.0, 1e-3);
}

TEST(TotalMassTest, RandomAffineModel) {
  std::mt19937_64 rng(4);
  auto model = FlowModel::make(ModelKind::kRealNvp, 2, 4, 8);
  randomize(model, rng, 0.3);
  EXPECT_NEAR(total_mass(model, Grid2D{}), 1.0, 1e-3);
}

TEST(TotalMassTest, RandomRadModel) {
  std::mt19937_64 rng(5);
  auto model = FlowModel::make(ModelKind::kRad, 2, 6, 8);
  testing::randomize_moderate(model, rng);
  EXPECT_NEAR(total_mass(model, covering_grid(model, rng)), 1.0, 1e-2);
}

TEST(TotalMassTest, SingleFoldAtInitialization) {
  // Uniform gating gives outer slopes of 1/3, so the grid must reach well
  // past the default box.
  std::mt19937_64 rng(13);
  auto model = FlowModel::make(ModelKind::kRad, 2, 1, 8);
  model.initialize(rng);
  EXPECT_NEAR(total_mass(model, Grid2D{-20.0, 20.0, 400}), 1.0, 1e-3);
  EXPECT_LT(total_mass(model, Grid2D{}), 0.97);
}

TEST(TotalMassTest, RejectsOtherDimensions) {
  EXPECT_THROW(total_mass(FlowModel(3), Grid2D{}), StructuralFault);
}

TEST(SampleTest, ZeroLayersSampleStandardNormal) {
  std::mt19937_64 rng(6);
  const FlowModel model(2);
  const auto samples = model.sample(10000, rng);
  double m0 = 0.0;
  double m1 = 0.0;
  for (const auto& s : samples) {
    m0 += s.x[0];
    m1 += s.x[1];
  }
  EXPECT_LT(std::abs(m0 / 1e4), 0.05);
  EXPECT_LT(std::abs(m1 / 1e4), 0.05);
}

TEST(SampleTest, FreshlyInitializedModelIsIdentity) {
  std::mt19937_64 rng(7);
  auto model = FlowModel::make(ModelKind::kRealNvp, 2, 6, 8);
  model.initialize(rng);
  const std::vector<double> x = {0.4, -1.1};
  EXPECT_NEAR(model.log_prob(x), FlowModel(2).log_prob(x), 1e-12);
  const auto s = model.sample_one(rng);
  EXPECT_NEAR(s.x[0], s.z[0], 1e-12);
  EXPECT_NEAR(s.x[1], s.z[1], 1e-12);
}

TEST(SampleTest, InferenceRecoversSampledPath) {
  std::mt19937_64 rng(8);
  auto model = FlowModel::make(ModelKind::kRad, 2, 6, 8);
  testing::randomize_moderate(model, rng);
  for (int i = 0; i < 2000; ++i) {
    const auto s = model.sample_one(rng);
    const auto t = model.trace(s.x);
    for (std::size_t l = 0; l < t.layers.size(); ++l) EXPECT_EQ(t.layers[l].k, s.k[l]) << "layer " << l;
    EXPECT_NEAR(t.latent()[0], s.z[0], 1e-8);
    EXPECT_NEAR(t.latent()[1], s.z[1], 1e-8);
  }
}

TEST(TraceTest, TotalIsBasePlusLayerTerms) {
  std::mt19937_64 rng(9);
  auto model = FlowModel::make(ModelKind::kRad, 2, 4, 8);
  randomize(model, rng, 0.5);
  const auto t = model.trace(std::vector<double>{0.7, -0.2});
  double total = standard_normal_log_density<double>(t.latent());
  for (const auto& rec : t.layers) total += rec.pseudo_log_jac;
  EXPECT_NEAR(t.total_log_prob, total, 1e-12);
  EXPECT_EQ(t.layers.size(), 4u);
}

TEST(ModelGradientTest, TapeMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> normal(0.0, 1.5);
  for (const auto kind : {ModelKind::kRad, ModelKind::kRealNvp}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto model = FlowModel::make(kind, 2, 4, 5);
      randomize(model, rng, 0.5);
      const std::vector<double> x = {normal(rng), normal(rng)};
      const std::vector<double> theta(model.params().begin(), model.params().end());
      Tape tape;
      const auto vars = tape.parameters(theta);
      const auto lp = model.log_prob<Var>(vars, x);
      const auto grad = tape.backward(lp, theta.size());
      auto eval = [&](std::span<const double> t) { return model.log_prob<double>(t, x); };
      auto crosses = [&](std::span<const double> t, std::size_t i, double h) {
        std::vector<double> w(t.begin(), t.end());
        InferenceTrace a;
        InferenceTrace b;
        w[i] += h;
        model.log_prob<double>(w, x, &a);
        w[i] -= 2 * h;
        model.log_prob<double>(w, x, &b);
        for (std::size_t l = 0; l < a.layers.size(); ++l) {
          if (a.layers[l].k != b.layers[l].k || a.layers[l].in_band != b.layers[l].in_band) return true;
        }
        return false;
      };
      const auto check = finite_diff_check(eval, theta, grad, 1e-5, crosses);
      EXPECT_LE(check.max_rel_error, 1e-4) << to_string(kind) << " trial " << trial;
    }
  }
}

// Counts jumps of f on [a, b]. An interval whose change exceeds c times its
// width is bisected down to width eps; if the change there still exceeds
// c * eps and survives further halving, it is a jump rather than a steep
// stretch.
int count_jumps(const std::function<double(double)>& f, double a, double b, double fa, double fb, double c,
                double eps) {
  if (std::abs(fb - fa) <= c * (b - a)) return 0;
  if (b - a <= eps) {
    if (std::abs(fb - fa) <= c * eps) return 0;
    for (int i = 0; i < 20; ++i) {
      const double m = 0.5 * (a + b);
      const double fm = f(m);
      if (std::abs(fm - fa) > std::abs(fb - fm)) {
        b = m;
        fb = fm;
      } else {
        a = m;
        fa = fm;
      }
    }
    return std::abs(fb - fa) > c * eps ? 1 : 0;
  }
  const double m = 0.5 * (a + b);
  const double fm = f(m);
  return count_jumps(f, a, m, fa, fm, c, eps) + count_jumps(f, m, b, fm, fb, c, eps);
}

TEST(ModelContinuityTest, LogProbContinuousAlongRays) {
  std::mt19937_64 rng(11);
  auto model = FlowModel::make(ModelKind::kRad, 2, 6, 8);
  testing::randomize_moderate(model, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double eps = 1e-5;
  const double c = 1e3;
  const double h = 1e-3;
  int jumps = 0;
  for (int ray = 0; ray < 100; ++ray) {
    const double ox = normal(rng);
    const double oy = normal(rng);
    const double angle = 2 * std::numbers::pi * unit(rng);
    auto f = [&](double t) {
      return model.log_prob(std::vector<double>{ox + t * std::cos(angle), oy + t * std::sin(angle)});
    };
    double prev = f(-4.0);
    for (int i = 0; i < 8000; ++i) {
      const double t = -4.0 + i * h;
      const double next = f(t + h);
      jumps += count_jumps(f, t, t + h, prev, next, c, eps);
      prev = next;
    }
  }
  EXPECT_EQ(jumps, 0);
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  std::mt19937_64 rng(12);
  FlowModel model(2);
  model.add_rad_layer(alternate_split(0, 2), 8);
  model.add_affine_layer(alternate_split(1, 2), 56);
  randomize(model, rng, 1.0);
  model.params()[0] = 0.1;
  model.params()[1] = -1e-300;
  std::stringstream buf;
  write_checkpoint(buf, model);
  const auto back = read_checkpoint(buf);
  ASSERT_EQ(back.param_count(), model.param_count());
  for (std::size_t i = 0; i < model.param_count(); ++i) EXPECT_EQ(back.params()[i], model.params()[i]);
  ASSERT_EQ(back.layers().size(), 2u);
  EXPECT_TRUE(std::holds_alternative<RadCoupling>(back.layers()[0]));
  EXPECT_EQ(std::get<AffineCoupling>(back.layers()[1]).hidden(), 56u);
  const std::vector<double> x = {0.3, 0.9};
  EXPECT_EQ(back.log_prob(x), model.log_prob(x));
}

TEST(CheckpointTest, VersionMismatchAndTruncationFault) {
  const auto model = FlowModel::make(ModelKind::kRad, 2, 2, 4);
  std::stringstream buf;
  write_checkpoint(buf, model);
  const std::string text = buf.str();

  std::string wrong = text;
  wrong.replace(wrong.find(" 1\n"), 3, " 9\n");
  std::istringstream a(wrong);
  EXPECT_THROW(read_checkpoint(a), CheckpointError);

  std::istringstream b(text.substr(0, text.size() - 20));
  EXPECT_THROW(read_checkpoint(b), CheckpointError);

  std::istringstream c("not a checkpoint");
  EXPECT_THROW(read_checkpoint(c), CheckpointError);
}

}  // namespace
}  // namespace radflow
