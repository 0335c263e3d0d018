#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <random>

#include "gmmloc/depth.hpp"
#include "gmmloc/evaluation.hpp"
#include "gmmloc/filter.hpp"
#include "gmmloc/gmm.hpp"

using namespace gmmloc;

namespace {

// A coarse map of the default room shared by the measurement tests.
const GmmMap& room_map() {
  static const GmmMap map = [] {
    EmConfig cfg;
    cfg.components = 32;
    cfg.max_iters = 40;
    cfg.seed = 1;
    return em_fit(perturb_cloud(sample_surface(default_room(), 6000, 2), 0.02, 3), cfg).map;
  }();
  return map;
}

Pose room_pose(double angle) {
  const Vec3 eye(1.5 * std::cos(angle), 1.5 * std::sin(angle), 0.0);
  return Pose(eye, look_at(eye, Vec3(0, 0, -1)));
}

double weight_sum(const ParticleSet& ps) {
  double s = 0.0;
  for (double w : ps.weights()) s += w;
  return s;
}

ParticleSet with_log_weights(const std::vector<double>& w) {
  ParticleSet ps;
  for (std::size_t i = 0; i < w.size(); ++i)
    ps.particles.push_back({Pose::translation(static_cast<double>(i), 0, 0), std::log(w[i])});
  return ps;
}

}  // namespace

TEST(InitParticles, KnownPose) {
  const Pose p(Vec3(1, 2, 3), Quat(0.5, 0.5, 0.5, 0.5));
  const auto ps = init_particles(1, p, 7);
  ASSERT_EQ(ps.size(), 1u);
  EXPECT_EQ(ps.particles[0].pose.position, p.position);
  EXPECT_DOUBLE_EQ(std::exp(ps.particles[0].log_weight), 1.0);
  EXPECT_THROW(init_particles(0, p, 7), InputError);
}

TEST(InitParticles, UniformBoxSupportAndMean) {
  PriorRegion r;
  r.center = Vec3(1, -2, 0.5);
  r.half_extent = Vec3(0.5, 0.2, 1.0);
  r.yaw_half_range = 0.3;
  const auto small = init_particles(1000, r, 3);
  for (const auto& p : small.particles) {
    const Vec3 d = (p.pose.position - r.center).cwiseAbs();
    EXPECT_TRUE((d.array() <= r.half_extent.array()).all());
    EXPECT_LE(rotation_angle(p.pose.orientation, r.orientation), 0.3 + 1e-12);
  }
  const auto big = init_particles(100000, r, 4);
  Vec3 mean = Vec3::Zero();
  for (const auto& p : big.particles) mean += p.pose.position;
  mean /= 1e5;
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(mean[a], r.center[a], 0.01 * r.half_extent[a]);
  EXPECT_NEAR(weight_sum(big), 1.0, 1e-9);
}

TEST(InitParticles, EmptyRegionIsInputError) {
  PriorRegion r;
  r.half_extent = Vec3(-1, 1, 1);
  EXPECT_THROW(init_particles(10, r, 1), InputError);
}

TEST(Predict, ZeroNoiseZeroOdometryIsIdentity) {
  PriorRegion r;
  r.half_extent = Vec3::Ones();
  r.yaw_half_range = 3.0;
  const auto ps = init_particles(50, r, 2);
  const auto out = predict(ps, MotionModel{0.0, 0.0, Pose::identity()});
  ASSERT_EQ(out.size(), ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    EXPECT_LT((out.particles[i].pose.position - ps.particles[i].pose.position).norm(), 1e-15);
    EXPECT_EQ(out.particles[i].log_weight, ps.particles[i].log_weight);
  }
}

TEST(Predict, OdometryAlongBodyX) {
  PriorRegion r;
  r.half_extent = Vec3::Ones();
  r.yaw_half_range = 3.0;
  const auto ps = init_particles(50, r, 2);
  const auto out = predict(ps, MotionModel{0.0, 0.0, Pose::translation(0.1, 0, 0)});
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& before = ps.particles[i].pose;
    const Vec3 expected = before.position + before.rotation() * Vec3(0.1, 0, 0);
    EXPECT_LT((out.particles[i].pose.position - expected).norm(), 1e-12);
    EXPECT_NEAR(rotation_angle(out.particles[i].pose.orientation, before.orientation), 0.0, 1e-7);
  }
}

TEST(Predict, PositionSpreadMatchesSigma) {
  const auto ps = init_particles(100000, Pose::identity(), 11);
  const MotionModel m{0.02, 0.01, Pose::identity()};
  const auto out = predict(ps, m);
  for (int a = 0; a < 3; ++a) {
    double s = 0.0, s2 = 0.0;
    for (const auto& p : out.particles) {
      s += p.pose.position[a];
      s2 += p.pose.position[a] * p.pose.position[a];
    }
    const double mean = s / 1e5;
    const double sd = std::sqrt(s2 / 1e5 - mean * mean);
    EXPECT_NEAR(sd, 0.02, 0.05 * 0.02) << "axis " << a;
  }
  // rotation noise: mean squared angle of an isotropic 3-D rotation vector is 3 sigma^2
  double ang2 = 0.0;
  for (const auto& p : out.particles) {
    const double a = rotation_angle(p.pose.orientation, Quat::Identity());
    ang2 += a * a / 1e5;
  }
  EXPECT_NEAR(ang2, 3.0 * 0.01 * 0.01, 0.05 * 3e-4);
}

TEST(Predict, NegativeNoiseIsInputError) {
  const auto ps = init_particles(3, Pose::identity(), 1);
  EXPECT_THROW(predict(ps, MotionModel{-1.0, 0.0, Pose::identity()}), InputError);
}

TEST(Update, SingleParticleKeepsUnitWeight) {
  const auto truth = room_pose(0.3);
  const auto d = render_ground_truth(default_room(), truth, CameraIntrinsics{});
  const auto ps = update(init_particles(1, Pose::translation(9, 9, 9), 1), d, CameraIntrinsics{},
                         room_map());
  EXPECT_NEAR(std::exp(ps.particles[0].log_weight), 1.0, 1e-12);
}

TEST(Update, GroundTruthParticleDominatesDisplacedOne) {
  // default-size map, untempered mean log-likelihood
  static const GmmMap map = [] {
    EmConfig cfg;
    cfg.seed = 1;
    return em_fit(perturb_cloud(sample_surface(default_room(), 20000, 2), 0.02, 3), cfg).map;
  }();
  const CameraIntrinsics k;
  const auto truth = room_pose(0.3);
  const auto d = render_ground_truth(default_room(), truth, k);
  UpdateConfig uc;
  uc.temperature = 1.0;
  for (int axis = 0; axis < 3; ++axis)
    for (double sign : {-1.0, 1.0}) {
      Vec3 offset = Vec3::Zero();
      offset[axis] = 2.0 * sign;
      ParticleSet ps = with_log_weights({0.5, 0.5});
      ps.particles[0].pose = truth;
      ps.particles[1].pose = compose(Pose(offset, Quat::Identity()), truth);
      const auto out = update(ps, d, k, map, uc);
      EXPECT_GT(std::exp(out.particles[0].log_weight), 0.99) << "axis " << axis << " sign " << sign;
      EXPECT_NEAR(weight_sum(out), 1.0, 1e-9);
    }
}

TEST(Update, ZeroTemperatureAndEmptyDepthLeaveWeightsUnchanged) {
  const CameraIntrinsics k;
  const auto truth = room_pose(1.0);
  const auto d = render_ground_truth(default_room(), truth, k);
  PriorRegion r;
  r.center = truth.position;
  r.orientation = truth.orientation;
  r.half_extent = Vec3::Constant(0.3);
  const auto ps = init_particles(20, r, 5);
  UpdateConfig cfg;
  cfg.temperature = 0.0;
  const auto frozen = update(ps, d, k, room_map(), cfg);
  for (std::size_t i = 0; i < ps.size(); ++i)
    EXPECT_NEAR(frozen.particles[i].log_weight, ps.particles[i].log_weight, 1e-12);

  const auto blank = update(ps, DepthRaster(k.width, k.height, 0.0f), k, room_map());
  EXPECT_TRUE(blank.no_valid_depth);
  for (std::size_t i = 0; i < ps.size(); ++i)
    EXPECT_EQ(blank.particles[i].log_weight, ps.particles[i].log_weight);
}

TEST(Update, TemperatureScalingKeepsArgmaxAndNormalization) {
  const CameraIntrinsics k;
  const auto truth = room_pose(2.0);
  const auto d = render_ground_truth(default_room(), truth, k);
  PriorRegion r;
  r.center = truth.position;
  r.orientation = truth.orientation;
  r.half_extent = Vec3::Constant(0.2);
  r.yaw_half_range = 0.1;
  const auto ps = init_particles(64, r, 8);
  auto argmax = [](const ParticleSet& s) {
    std::size_t b = 0;
    for (std::size_t i = 1; i < s.size(); ++i)
      if (s.particles[i].log_weight > s.particles[b].log_weight) b = i;
    return b;
  };
  std::size_t ref = 0;
  for (double tau : {0.01, 0.1, 1.0, 10.0}) {
    UpdateConfig cfg;
    cfg.temperature = tau;
    const auto out = update(ps, d, k, room_map(), cfg);
    EXPECT_EQ(out.size(), ps.size());
    EXPECT_NEAR(weight_sum(out), 1.0, 1e-9);
    if (tau == 0.01) ref = argmax(out);
    EXPECT_EQ(argmax(out), ref) << "tau " << tau;
  }
}

TEST(Update, ParallelMatchesSerial) {
  const CameraIntrinsics k;
  const auto truth = room_pose(2.5);
  const auto d = render_ground_truth(default_room(), truth, k);
  PriorRegion r;
  r.center = truth.position;
  r.orientation = truth.orientation;
  r.half_extent = Vec3::Constant(0.2);
  const auto ps = init_particles(37, r, 8);
  UpdateConfig serial, parallel;
  parallel.threads = 4;
  const auto a = update(ps, d, k, room_map(), serial);
  const auto b = update(ps, d, k, room_map(), parallel);
  for (std::size_t i = 0; i < ps.size(); ++i)
    EXPECT_EQ(a.particles[i].log_weight, b.particles[i].log_weight);
}

TEST(Resample, UniformWeightsAreLeftAlone) {
  const auto ps = with_log_weights(std::vector<double>(100, 0.01));
  EXPECT_NEAR(effective_sample_size(ps), 100.0, 1e-9);
  const auto out = resample_if_needed(ps);
  EXPECT_FALSE(out.resampled);
  for (std::size_t i = 0; i < ps.size(); ++i)
    EXPECT_EQ(out.particles[i].pose.position, ps.particles[i].pose.position);
}

TEST(Resample, DegenerateWeightsDuplicateSurvivor) {
  std::vector<double> w(100, 0.0);
  w[37] = 1.0;
  const auto ps = with_log_weights(w);
  EXPECT_NEAR(effective_sample_size(ps), 1.0, 1e-12);
  const auto out = resample_if_needed(ps);
  EXPECT_TRUE(out.resampled);
  ASSERT_EQ(out.size(), 100u);
  for (const auto& p : out.particles) {
    EXPECT_EQ(p.pose.position.x(), 37.0);
    EXPECT_NEAR(p.log_weight, -std::log(100.0), 1e-12);
  }
}

TEST(Resample, MultiplicityTracksWeights) {
  const std::size_t n = 200;
  std::mt19937_64 rng(1);
  std::exponential_distribution<double> e(1.0);
  std::vector<double> w(n);
  double total = 0.0;
  for (auto& x : w) total += (x = std::pow(e(rng), 4.0));
  for (auto& x : w) x /= total;
  auto ps = with_log_weights(w);
  ASSERT_LT(effective_sample_size(ps), 0.5 * n);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    ps.seed = seed;
    const auto out = resample_if_needed(ps);
    std::vector<int> count(n, 0);
    for (const auto& p : out.particles) ++count[static_cast<std::size_t>(p.pose.position.x())];
    for (std::size_t i = 0; i < n; ++i) {
      const double expected = n * w[i];
      EXPECT_LE(std::abs(count[i] - expected), std::max(1.0, 3.0 * std::sqrt(expected)));
    }
  }
}

TEST(Estimate, IdenticalAndMidpoint) {
  const Pose p(Vec3(1, 2, 3), Quat(0.8, 0.0, 0.6, 0.0));
  const auto same = init_particles(5, p, 1);
  const Pose e = estimate(same);
  EXPECT_LT((e.position - p.position).norm(), 1e-12);
  EXPECT_NEAR(rotation_angle(e.orientation, p.orientation), 0.0, 1e-7);

  auto two = with_log_weights({0.5, 0.5});
  two.particles[1].pose.position = Vec3(2, 0, 0);
  EXPECT_NEAR(estimate(two).position.x(), 1.0, 1e-12);
}

TEST(Estimate, QuaternionDoubleCover) {
  const Quat q = Quat(0.3, -0.4, 0.5, 0.7).normalized();
  auto ps = with_log_weights({0.5, 0.5});
  ps.particles[0].pose.orientation = q;
  ps.particles[1].pose.orientation = Quat(-q.coeffs());
  const Pose e = estimate(ps);
  EXPECT_NEAR(std::abs(e.orientation.dot(q)), 1.0, 1e-12);
}

TEST(RunTrajectory, StaticCameraWithoutNoiseStaysAtTruth) {
  const CameraIntrinsics k;
  const std::vector<Pose> truth(5, room_pose(0.7));
  FilterConfig cfg;
  cfg.particles = 10;
  cfg.sigma_t = cfg.sigma_r = 0.0;
  cfg.init_position_spread = cfg.init_yaw_spread = 0.0;
  const GroundTruthProvider gt(default_room());
  const auto res = run_trajectory(gt, nullptr, room_map(), truth, k, cfg);
  ASSERT_EQ(res.size(), truth.size());
  for (std::size_t f = 0; f < truth.size(); ++f) {
    EXPECT_LT((res[f].estimate.position - truth[f].position).norm(), 1e-12);
    EXPECT_NEAR(rotation_angle(res[f].estimate.orientation, truth[f].orientation), 0.0, 1e-7);
  }
}

TEST(RunTrajectory, DeterministicAndThreadInvariant) {
  const CameraIntrinsics k;
  TrajectorySpec spec;
  spec.frames = 8;
  spec.sweep = 0.4;
  const auto truth = generate_trajectory(spec);
  const GroundTruthProvider gt(default_room());
  FilterConfig cfg;
  cfg.particles = 60;
  cfg.seed = 5;
  const auto a = run_trajectory(gt, nullptr, room_map(), truth, k, cfg);
  const auto b = run_trajectory(gt, nullptr, room_map(), truth, k, cfg);
  cfg.threads = 3;
  const auto c = run_trajectory(gt, nullptr, room_map(), truth, k, cfg);
  for (std::size_t f = 0; f < truth.size(); ++f) {
    EXPECT_EQ(a[f].estimate.position, b[f].estimate.position);
    EXPECT_EQ(a[f].mean_loglik, b[f].mean_loglik);
    EXPECT_LT((a[f].estimate.position - c[f].estimate.position).norm(), 1e-9);
  }
  std::vector<Pose> est;
  for (const auto& f : a) est.push_back(f.estimate);
  EXPECT_LT(trajectory_rmse(est, truth), 0.1);
}
