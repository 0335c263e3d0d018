#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gmmloc/adaptation.hpp"
#include "gmmloc/evaluation.hpp"

using namespace gmmloc;

namespace {

Pose room_pose(double angle, double radius = 1.5) {
  const Vec3 eye(radius * std::cos(angle), radius * std::sin(angle), 0.0);
  return Pose(eye, look_at(eye, Vec3(0, 0, -1)));
}

const GmmMap& room_map() {
  static const GmmMap map = [] {
    EmConfig cfg;
    cfg.components = 16;
    cfg.max_iters = 30;
    cfg.seed = 3;
    return em_fit(perturb_cloud(sample_surface(default_room(), 4000, 1), 0.02, 2), cfg).map;
  }();
  return map;
}

TrainingBatch room_batch(int frames, const DegradationParams* degradation) {
  TrainingBatch b;
  for (int i = 0; i < frames; ++i) {
    const Pose p = room_pose(0.4 + 2.0 * std::numbers::pi * i / frames);
    auto d = render_ground_truth(default_room(), p, b.intrinsics);
    if (degradation) d = degrade(d, *degradation, i);
    b.frames.push_back({d, p});
  }
  return b;
}

MlpTransform random_mlp(int hidden, std::uint64_t seed, double sd) {
  MlpTransform m(hidden);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  for (std::size_t i = 0; i < m.parameter_count(); ++i) m.param(i) = n(rng);
  return m;
}

DepthCorrection random_correction(std::uint64_t seed, double sd) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  DepthCorrection c;
  for (int i = 0; i < DepthCorrection::kParams; ++i) c.param(i) = n(rng);
  return c;
}

// Two broad components straddling the view of one frame.
GmmMap two_component_map(const TrainingBatch& b) {
  const auto world = transform_cloud(back_project(b.frames[0].depth, b.intrinsics, 8),
                                     b.frames[0].pose);
  Vec3 lo = world.points[0], hi = world.points[0];
  for (const auto& p : world.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  Mat3 c0 = 0.4 * Mat3::Identity(), c1 = 0.6 * Mat3::Identity();
  c0(0, 1) = c0(1, 0) = 0.1;
  return GmmMap({{lo + 0.3 * (hi - lo), c0, 0.4}, {lo + 0.7 * (hi - lo), c1, 0.6}});
}

bool close_rel(double a, double b, double rel) {
  return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), 1e-6});
}

}  // namespace

TEST(MlpTransform, InitializedStartsAtIdentity) {
  const auto m = MlpTransform::initialized(128, 4);
  EXPECT_EQ(m.parameter_count(), 128u * 3 + 128 + 3 * 128 + 3);
  EXPECT_NE(m.w1().norm(), 0.0);
  EXPECT_EQ(m.w2().norm(), 0.0);
  const Vec3 x(0.3, -1.2, 2.0);
  EXPECT_EQ(m.apply(x), x);
}

TEST(MlpTransform, BackwardMatchesFiniteDifferences) {
  const auto m = random_mlp(16, 2, 0.5);
  const Vec3 x(0.4, -0.8, 1.3), g(0.7, -0.2, 0.5);
  std::vector<double> grad(m.parameter_count(), 0.0);
  m.backward(x, g, grad);
  for (std::size_t i = 0; i < m.parameter_count(); ++i) {
    auto plus = m, minus = m;
    plus.param(i) += 1e-6;
    minus.param(i) -= 1e-6;
    const double fd = g.dot(plus.displacement(x) - minus.displacement(x)) / 2e-6;
    EXPECT_TRUE(close_rel(grad[i], fd, 1e-5)) << i << ": " << grad[i] << " vs " << fd;
  }
}

TEST(AdaptMap, ZeroResidualLeavesMapUnchanged) {
  const auto& base = room_map();
  const auto am = adapt_map(MlpTransform::initialized(128, 1), base);
  EXPECT_TRUE(am.adapted == base);
  EXPECT_EQ(goldberger_kl(base, am.adapted), 0.0);
}

TEST(AdaptMap, ConstantOutputShiftsEveryMean) {
  // fit a small MLP to the constant displacement c
  const Vec3 c(0.12, -0.05, 0.2);
  auto mlp = MlpTransform::initialized(8, 5);
  const auto cloud = sample_surface(default_room(), 64, 4);
  for (int it = 0; it < 3000; ++it) {
    std::vector<double> grad(mlp.parameter_count(), 0.0);
    for (const auto& p : cloud.points)
      mlp.backward(p, 2.0 * (mlp.displacement(p) - c) / 64.0, grad);
    for (std::size_t i = 0; i < grad.size(); ++i) mlp.param(i) -= 0.05 * grad[i];
  }
  const auto& base = room_map();
  const auto am = adapt_map(mlp, base);
  ASSERT_EQ(am.adapted.size(), base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_LT((am.adapted[i].mean - base[i].mean - c).norm(), 0.02);
    EXPECT_EQ(am.adapted[i].weight, base[i].weight);
    EXPECT_EQ(am.adapted[i].covariance, base[i].covariance);
  }
}

TEST(AdaptMap, DoesNotMutateBase) {
  const GmmMap base = room_map();
  const GmmMap copy = base;
  const auto am = adapt_map(random_mlp(128, 9, 0.1), base);
  EXPECT_TRUE(base == copy);
  double w = 0.0;
  for (const auto& c : am.adapted.components()) w += c.weight;
  EXPECT_NEAR(w, 1.0, 1e-9);
}

TEST(AdaptPointCloud, IdentityAndUniformShift) {
  const auto cloud = sample_surface(default_room(), 500, 6);
  EXPECT_EQ(adapt_point_cloud(MlpTransform::initialized(32, 1), cloud).points, cloud.points);
  MlpTransform shift(4);
  shift.b2() = Vec3(0.3, 0.0, -0.4);
  const auto moved = adapt_point_cloud(shift, cloud);
  const auto hist = cloud_to_cloud(cloud, moved, 10);
  for (double d : hist.distances) EXPECT_NEAR(d, 0.5, 1e-12);
}

TEST(Loss, KlVanishesAtBaseAndLambdaIsLinear) {
  const auto batch = room_batch(2, nullptr);
  const auto& base = room_map();
  const auto zero = MlpTransform::initialized(128, 2);
  const auto v0 = loss(zero, DepthCorrection::identity(), batch, base, 7.0);
  EXPECT_EQ(v0.kl, 0.0);
  EXPECT_EQ(v0.total, v0.nll);

  const auto mlp = random_mlp(128, 3, 0.05);
  const auto a = loss(mlp, DepthCorrection::identity(), batch, base, 2.0);
  const auto b = loss(mlp, DepthCorrection::identity(), batch, base, 4.0);
  ASSERT_GT(a.kl, 0.0);
  EXPECT_NEAR(b.total - a.total, 2.0 * a.kl, 1e-9 * std::abs(b.total));
}

TEST(Loss, FrozenMapMatchesIndependentNll) {
  const auto batch = room_batch(3, nullptr);
  const auto& base = room_map();
  double nll = 0.0;
  for (const auto& f : batch.frames) {
    const auto world = transform_cloud(back_project(f.depth, batch.intrinsics, 8), f.pose);
    double s = 0.0;
    for (const auto& p : world.points) s += log_pdf(base, p);
    nll -= s / static_cast<double>(world.size());
  }
  const auto v =
      loss(MlpTransform::initialized(128, 1), DepthCorrection::identity(), batch, base, 1.0);
  EXPECT_NEAR(v.total, nll, 1e-6);
}

TEST(Gradients, MatchFiniteDifferencesOnEveryParameter) {
  auto batch = room_batch(1, nullptr);
  const GmmMap base = two_component_map(batch);
  const double lambda = 1.5;
  const int stride = 8;
  // parameters drawn from N(0, 0.01)
  const auto mlp = random_mlp(128, 11, 0.1);
  const auto corr = random_correction(12, 0.1);
  LossValue lv;
  const auto g = gradients(mlp, corr, batch, base, lambda, stride, &lv);
  EXPECT_GT(lv.kl, 0.0);
  const double h = 1e-5;
  int bad = 0;
  for (std::size_t i = 0; i < mlp.parameter_count(); ++i) {
    auto p = mlp, m = mlp;
    p.param(i) += h;
    m.param(i) -= h;
    const double fd = (loss(p, corr, batch, base, lambda, stride).total -
                       loss(m, corr, batch, base, lambda, stride).total) /
                      (2 * h);
    if (!close_rel(g.mlp[i], fd, 1e-4)) {
      ++bad;
      ADD_FAILURE() << "mlp param " << i << ": analytic " << g.mlp[i] << " fd " << fd;
    }
  }
  for (int i = 0; i < DepthCorrection::kParams; ++i) {
    auto p = corr, m = corr;
    p.param(i) += h;
    m.param(i) -= h;
    const double fd = (loss(mlp, p, batch, base, lambda, stride).total -
                       loss(mlp, m, batch, base, lambda, stride).total) /
                      (2 * h);
    if (!close_rel(g.depth[i], fd, 1e-4)) {
      ++bad;
      ADD_FAILURE() << "depth param " << i << ": analytic " << g.depth[i] << " fd " << fd;
    }
  }
  EXPECT_EQ(bad, 0);
}

TEST(Gradients, KlTermZeroAtBaseAndLinearInLambda) {
  const auto batch = room_batch(1, nullptr);
  const auto& base = room_map();
  const auto zero = MlpTransform::initialized(128, 4);
  const auto g0 = gradients(zero, DepthCorrection::identity(), batch, base, 0.0);
  const auto g5 = gradients(zero, DepthCorrection::identity(), batch, base, 5.0);
  EXPECT_EQ(g0.mlp, g5.mlp);

  const auto mlp = random_mlp(128, 6, 0.05);
  const auto a0 = gradients(mlp, DepthCorrection::identity(), batch, base, 0.0);
  const auto a1 = gradients(mlp, DepthCorrection::identity(), batch, base, 1.0);
  const auto a3 = gradients(mlp, DepthCorrection::identity(), batch, base, 3.0);
  for (std::size_t i = 0; i < a0.mlp.size(); ++i) {
    const double k1 = a1.mlp[i] - a0.mlp[i];
    const double k3 = a3.mlp[i] - a0.mlp[i];
    EXPECT_NEAR(k3, 3.0 * k1, 1e-9 * std::max(1.0, std::abs(a3.mlp[i])));
  }
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  const auto batch = room_batch(2, nullptr);
  TrainConfig cfg;
  cfg.learning_rate = cfg.mlp_learning_rate = 0.0;
  cfg.iterations = 5;
  cfg.optimizer = Optimizer::GradientDescent;
  const auto init = MlpTransform::initialized(cfg.hidden, cfg.seed);
  const auto res = train(batch, room_map(), cfg);
  EXPECT_TRUE(res.mlp == init);
  EXPECT_TRUE(res.correction == DepthCorrection::identity());
  ASSERT_EQ(res.loss_history.size(), 6u);
  for (double l : res.loss_history) EXPECT_EQ(l, res.loss_history.front());
}

TEST(Train, OffsetBiasIsReduced) {
  DegradationParams p;
  p.offset = 0.3;
  p.bias_amplitude = 0.0;
  p.noise_sigma = 0.0;
  const auto batch = room_batch(4, &p);
  TrainConfig cfg;
  cfg.lambda = 0.1;
  cfg.iterations = 60;
  const auto res = train(batch, room_map(), cfg);
  ASSERT_FALSE(res.diverged) << res.diagnostic;
  ASSERT_EQ(res.loss_history.size(), 61u);
  for (int i = 1; i <= 10; ++i) EXPECT_LT(res.loss_history[i], res.loss_history[i - 1]);
  EXPECT_LT(res.loss_history.back(), res.loss_history.front());

  // corrected depth moves back toward the clean value
  const auto& f = batch.frames[0];
  const double before = f.depth.at(80, 60);
  const double after = res.correction.corrected(80, 60, before, f.depth.width, f.depth.height);
  EXPECT_LT(after, before);
}

TEST(Train, StrongRegularizationMovesMeansLess) {
  DegradationParams p;
  p.offset = 0.3;
  p.bias_amplitude = 0.0;
  p.noise_sigma = 0.0;
  const auto batch = room_batch(3, &p);
  TrainConfig cfg;
  cfg.iterations = 30;
  cfg.lambda = 0.1;
  const auto weak = train(batch, room_map(), cfg);
  cfg.lambda = 1e6;
  const auto strong = train(batch, room_map(), cfg);
  const double dw = mean_displacement(adapt_map(weak.mlp, room_map()));
  const double ds = mean_displacement(adapt_map(strong.mlp, room_map()));
  EXPECT_LT(ds, dw);
}

TEST(Train, DivergenceRollsBackToFiniteState) {
  const auto batch = room_batch(1, nullptr);
  TrainConfig cfg;
  cfg.optimizer = Optimizer::GradientDescent;
  cfg.learning_rate = cfg.mlp_learning_rate = 1e300;
  cfg.iterations = 10;
  const auto res = train(batch, room_map(), cfg);
  EXPECT_TRUE(res.diverged);
  EXPECT_FALSE(res.diagnostic.empty());
  EXPECT_TRUE(res.mlp.is_finite());
  EXPECT_TRUE(res.correction.is_finite());
  for (double l : res.loss_history) EXPECT_TRUE(std::isfinite(l));
}

TEST(Train, RejectsInvalidConfig) {
  const auto batch = room_batch(1, nullptr);
  TrainConfig cfg;
  cfg.lambda = -1.0;
  EXPECT_THROW(train(batch, room_map(), cfg), InputError);
  EXPECT_THROW(train(TrainingBatch{}, room_map(), TrainConfig{}), InputError);
}

TEST(Train, MiniBatchesAndThreadsAreDeterministic) {
  const auto batch = room_batch(4, nullptr);
  TrainConfig cfg;
  cfg.iterations = 4;
  cfg.batch_size = 2;
  const auto a = train(batch, room_map(), cfg);
  cfg.threads = 3;
  const auto b = train(batch, room_map(), cfg);
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_TRUE(a.mlp == b.mlp);
}

TEST(Consistency, C2cMeanEqualsMeanDisplacement) {
  const auto& base = room_map();
  const auto mlp = random_mlp(128, 8, 0.05);
  PointCloud means;
  for (const auto& c : base.components()) means.points.push_back(c.mean);
  const auto hist = cloud_to_cloud(means, adapt_point_cloud(mlp, means), 5);
  EXPECT_NEAR(hist.mean(), mean_displacement(adapt_map(mlp, base)), 1e-9);
}
