#pragma once

// Particle filter over camera poses, weighted by the GMM log-likelihood of the
// back-projected depth scan.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "gmmloc/depth.hpp"
#include "gmmloc/detail/parallel.hpp"
#include "gmmloc/detail/rng.hpp"
#include "gmmloc/errors.hpp"
#include "gmmloc/geometry.hpp"
#include "gmmloc/gmm.hpp"

namespace gmmloc {

struct Particle {
  Pose pose;
  double log_weight = 0.0;
};

struct ParticleSet {
  std::vector<Particle> particles;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  // Diagnostics from the most recent update / resample.
  bool no_valid_depth = false;
  double mean_loglik = 0.0;
  double ess = 0.0;
  bool resampled = false;

  std::size_t size() const { return particles.size(); }
  std::vector<double> weights() const {
    std::vector<double> w;
    w.reserve(particles.size());
    for (const auto& p : particles) w.push_back(std::exp(p.log_weight));
    return w;
  }
};

struct MotionModel {
  double sigma_t = 0.02;  // m per step, per axis
  double sigma_r = 0.01;  // rad per step, per axis
  Pose odometry;          // body-frame increment applied before the noise
};

/// Axis-aligned position box around `center` plus a yaw range about world z.
struct PriorRegion {
  Vec3 center = Vec3::Zero();
  Vec3 half_extent = Vec3::Zero();
  Quat orientation = Quat::Identity();
  double yaw_half_range = 0.0;
};

namespace detail {

inline void normalize_log_weights(std::vector<Particle>& ps) {
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& p : ps) mx = std::max(mx, p.log_weight);
  double s = 0.0;
  for (const auto& p : ps) s += std::exp(p.log_weight - mx);
  const double lse = mx + std::log(s);
  for (auto& p : ps) p.log_weight -= lse;
}

}  // namespace detail

inline ParticleSet init_particles(std::size_t n, const Pose& known, std::uint64_t seed) {
  if (n < 1) throw InputError("init_particles: need at least one particle");
  ParticleSet ps;
  ps.seed = seed;
  const double lw = -std::log(static_cast<double>(n));
  ps.particles.assign(n, Particle{known, lw});
  return ps;
}

inline ParticleSet init_particles(std::size_t n, const PriorRegion& region, std::uint64_t seed) {
  if (n < 1) throw InputError("init_particles: need at least one particle");
  if (!(region.half_extent.array() >= 0.0).all() || !(region.yaw_half_range >= 0.0))
    throw InputError("init_particles: empty prior region");
  ParticleSet ps;
  ps.seed = seed;
  auto rng = detail::make_rng(seed, 0x696e);
  const double lw = -std::log(static_cast<double>(n));
  ps.particles.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 t;
    for (int a = 0; a < 3; ++a)
      t[a] = region.center[a] + (2.0 * detail::uniform01(rng) - 1.0) * region.half_extent[a];
    const double yaw = (2.0 * detail::uniform01(rng) - 1.0) * region.yaw_half_range;
    const Quat q = Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())) * region.orientation;
    ps.particles.push_back({Pose(t, q), lw});
  }
  return ps;
}

/// Applies the odometry increment and seeded body-frame noise to each particle.
/// Each particle draws from its own stream keyed by (seed, step, index).
inline ParticleSet predict(const ParticleSet& in, const MotionModel& m) {
  if (m.sigma_t < 0.0 || m.sigma_r < 0.0) throw InputError("motion noise must be >= 0");
  ParticleSet ps = in;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps.particles[i];
    Pose next = compose(p.pose, m.odometry);
    if (m.sigma_t > 0.0 || m.sigma_r > 0.0) {
      auto rng = detail::make_rng(ps.seed, 0x7072 + ps.step, i);
      std::normal_distribution<double> normal(0.0, 1.0);
      const Vec3 dt(normal(rng), normal(rng), normal(rng));
      const Vec3 dr(normal(rng), normal(rng), normal(rng));
      next = compose(next, Pose(m.sigma_t * dt, exp_rotation(m.sigma_r * dr)));
    }
    p.pose = next;
  }
  ++ps.step;
  return ps;
}

struct UpdateConfig {
  int stride = 8;
  double temperature = 0.1;
  int threads = 1;
};

/// Mean per-point log-likelihood of a camera-frame cloud placed at `pose`.
inline double mean_cloud_loglik(const GmmMap& map, const PointCloud& cam, const Pose& pose) {
  const Mat3 r = pose.rotation();
  double s = 0.0;
  for (const auto& p : cam.points) s += map.log_pdf(r * p + pose.position);
  return s / static_cast<double>(cam.size());
}

inline ParticleSet update(const ParticleSet& in, const DepthRaster& d, const CameraIntrinsics& k,
                          const GmmMap& map, const UpdateConfig& cfg = {}) {
  if (map.size() == 0) throw InputError("update: empty map");
  ParticleSet ps = in;
  const PointCloud cam = back_project(d, k, cfg.stride);
  if (cam.empty()) {
    ps.no_valid_depth = true;
    return ps;
  }
  ps.no_valid_depth = false;
  std::vector<double> ll(ps.size());
  detail::parallel_for(ps.size(), cfg.threads, [&](std::size_t i) {
    ll[i] = mean_cloud_loglik(map, cam, ps.particles[i].pose);
  });
  for (std::size_t i = 0; i < ps.size(); ++i)
    ps.particles[i].log_weight += cfg.temperature * ll[i];
  detail::normalize_log_weights(ps.particles);
  double mean = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i)
    mean += std::exp(ps.particles[i].log_weight) * ll[i];
  ps.mean_loglik = mean;
  return ps;
}

inline double effective_sample_size(const ParticleSet& ps) {
  double s2 = 0.0;
  for (const auto& p : ps.particles) {
    const double w = std::exp(p.log_weight);
    s2 += w * w;
  }
  return 1.0 / s2;
}

/// Systematic resampling when ESS < threshold * n; weights become uniform.
inline ParticleSet resample_if_needed(const ParticleSet& in, double ess_threshold = 0.5) {
  ParticleSet ps = in;
  const std::size_t n = ps.size();
  ps.ess = effective_sample_size(ps);
  ps.resampled = false;
  if (!(ps.ess < ess_threshold * static_cast<double>(n))) return ps;

  auto rng = detail::make_rng(ps.seed, 0x7273, ps.step);
  const double dn = static_cast<double>(n);
  const double u0 = detail::uniform01(rng) / dn;
  std::vector<Particle> out;
  out.reserve(n);
  const double lw = -std::log(dn);
  double cum = std::exp(in.particles[0].log_weight);
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double target = u0 + static_cast<double>(i) / dn;
    while (target > cum && j + 1 < n) cum += std::exp(in.particles[++j].log_weight);
    out.push_back({in.particles[j].pose, lw});
  }
  ps.particles = std::move(out);
  ps.resampled = true;
  return ps;
}

/// Weighted mean position; quaternions sign-aligned to the heaviest particle,
/// summed with weights and renormalized.
inline Pose estimate(const ParticleSet& ps) {
  if (ps.particles.empty()) throw InputError("estimate: empty particle set");
  std::size_t best = 0;
  for (std::size_t i = 1; i < ps.size(); ++i)
    if (ps.particles[i].log_weight > ps.particles[best].log_weight) best = i;
  const Quat& ref = ps.particles[best].pose.orientation;
  Vec3 t = Vec3::Zero();
  Eigen::Vector4d q = Eigen::Vector4d::Zero();
  double total = 0.0;
  for (const auto& p : ps.particles) {
    const double w = std::exp(p.log_weight);
    total += w;
    t += w * p.pose.position;
    const auto& pq = p.pose.orientation;
    const double sign = pq.dot(ref) < 0.0 ? -1.0 : 1.0;
    q += sign * w * Eigen::Vector4d(pq.w(), pq.x(), pq.y(), pq.z());
  }
  t /= total;
  q.normalize();
  return Pose(t, Quat(q[0], q[1], q[2], q[3]));
}

// ---------------------------------------------------------------------------
// Trajectory runner

struct FilterConfig {
  std::size_t particles = 500;
  std::uint64_t seed = 0;
  double sigma_t = 0.02;
  double sigma_r = 0.01;
  double temperature = 0.1;
  int stride = 8;
  double ess_threshold = 0.5;
  double init_position_spread = 0.1;  // half-width of the initial box, m
  double init_yaw_spread = 0.05;      // rad
  int threads = 1;
};

struct FrameResult {
  Pose estimate;
  double ess = 0.0;
  double mean_loglik = 0.0;
  bool resampled = false;
  bool no_valid_depth = false;
};

/// Tracks a camera moving along `truth`. Depth for frame k is rendered by the
/// provider at truth[k] and optionally corrected; odometry between frames is
/// the exact relative motion of the true trajectory.
inline std::vector<FrameResult> run_trajectory(const DepthProvider& provider,
                                               const DepthCorrection* correction,
                                               const GmmMap& map, const std::vector<Pose>& truth,
                                               const CameraIntrinsics& k,
                                               const FilterConfig& cfg) {
  std::vector<FrameResult> out;
  if (truth.empty()) return out;
  PriorRegion prior;
  prior.center = truth.front().position;
  prior.half_extent = Vec3::Constant(cfg.init_position_spread);
  prior.orientation = truth.front().orientation;
  prior.yaw_half_range = cfg.init_yaw_spread;
  ParticleSet ps = init_particles(cfg.particles, prior, cfg.seed);
  const UpdateConfig ucfg{cfg.stride, cfg.temperature, cfg.threads};

  for (std::size_t f = 0; f < truth.size(); ++f) {
    if (f > 0) {
      MotionModel mm{cfg.sigma_t, cfg.sigma_r, compose(inverse(truth[f - 1]), truth[f])};
      ps = predict(ps, mm);
    }
    DepthRaster d = provider.render(f, truth[f], k);
    if (correction) d = apply_correction(d, *correction);
    ps = update(ps, d, k, map, ucfg);
    ps = resample_if_needed(ps, cfg.ess_threshold);
    out.push_back({estimate(ps), ps.ess, ps.mean_loglik, ps.resampled, ps.no_valid_depth});
  }
  return out;
}

}  // namespace gmmloc
