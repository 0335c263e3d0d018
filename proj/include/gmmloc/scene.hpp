#pragma once

// Synthetic scenes built from analytic primitives, surface sampling for map
// construction, ray casting, and camera trajectory generation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "gmmloc/detail/rng.hpp"
#include "gmmloc/errors.hpp"
#include "gmmloc/geometry.hpp"

namespace gmmloc {

/// Finite rectangle centered at `center`, spanning local x/y by +-half_x/+-half_y.
struct Plane {
  Vec3 center = Vec3::Zero();
  Quat orientation = Quat::Identity();
  double half_x = 1.0;
  double half_y = 1.0;
};

/// Axis-aligned box.
struct Box {
  Vec3 center = Vec3::Zero();
  Vec3 half_extent = Vec3::Constant(0.5);
};

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

using Primitive = std::variant<Plane, Box, Sphere>;

struct SceneModel {
  std::vector<Primitive> primitives;

  void validate() const {
    for (const auto& p : primitives) {
      const bool ok = std::visit(
          [](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Plane>)
              return s.half_x > 0 && s.half_y > 0 && s.center.allFinite();
            else if constexpr (std::is_same_v<T, Box>)
              return (s.half_extent.array() > 0).all() && s.center.allFinite();
            else
              return s.radius > 0 && s.center.allFinite();
          },
          p);
      if (!ok) throw InputError("scene primitive with non-positive extent");
    }
  }
};

inline double surface_area(const Primitive& p) {
  return std::visit(
      [](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Plane>) {
          return 4.0 * s.half_x * s.half_y;
        } else if constexpr (std::is_same_v<T, Box>) {
          const Vec3& h = s.half_extent;
          return 8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z());
        } else {
          return 4.0 * std::numbers::pi * s.radius * s.radius;
        }
      },
      p);
}

/// 6 x 6 x 3 m room centered at the origin: floor and four walls, two boxes
/// and a sphere as landmarks.
inline SceneModel default_room() {
  SceneModel s;
  const double hx = 3.0, hy = 3.0, hz = 1.5;
  const Quat about_y(Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitY()));
  const Quat about_x(Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitX()));
  s.primitives.push_back(Plane{Vec3(0, 0, -hz), Quat::Identity(), hx, hy});
  s.primitives.push_back(Plane{Vec3(hx, 0, 0), about_y, hz, hy});
  s.primitives.push_back(Plane{Vec3(-hx, 0, 0), about_y, hz, hy});
  s.primitives.push_back(Plane{Vec3(0, hy, 0), about_x, hx, hz});
  s.primitives.push_back(Plane{Vec3(0, -hy, 0), about_x, hx, hz});
  s.primitives.push_back(Box{Vec3(0.8, 0.5, -1.1), Vec3(0.4, 0.3, 0.4)});
  s.primitives.push_back(Box{Vec3(-0.7, -0.6, -1.2), Vec3(0.3, 0.5, 0.3)});
  s.primitives.push_back(Sphere{Vec3(-0.3, 0.9, -1.0), 0.5});
  return s;
}

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  double diagonal() const { return (hi - lo).norm(); }
};

inline Aabb bounds(const SceneModel& scene) {
  Aabb box;
  for (const auto& prim : scene.primitives) {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Plane>) {
            for (int sx : {-1, 1})
              for (int sy : {-1, 1})
                box.extend(s.center + s.orientation * Vec3(sx * s.half_x, sy * s.half_y, 0));
          } else if constexpr (std::is_same_v<T, Box>) {
            box.extend(s.center - s.half_extent);
            box.extend(s.center + s.half_extent);
          } else {
            box.extend(s.center - Vec3::Constant(s.radius));
            box.extend(s.center + Vec3::Constant(s.radius));
          }
        },
        prim);
  }
  return box;
}

// ---------------------------------------------------------------------------
// Ray casting

namespace detail {

inline std::optional<double> intersect(const Plane& p, const Vec3& o, const Vec3& d) {
  const Mat3 r = p.orientation.toRotationMatrix();
  const Vec3 n = r.col(2);
  const double denom = n.dot(d);
  if (std::abs(denom) < 1e-15) return std::nullopt;
  const double t = n.dot(p.center - o) / denom;
  if (!(t > 0.0)) return std::nullopt;
  const Vec3 local = r.transpose() * (o + t * d - p.center);
  if (std::abs(local.x()) > p.half_x || std::abs(local.y()) > p.half_y) return std::nullopt;
  return t;
}

inline std::optional<double> intersect(const Box& b, const Vec3& o, const Vec3& d) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double lo = b.center[a] - b.half_extent[a];
    const double hi = b.center[a] + b.half_extent[a];
    if (std::abs(d[a]) < 1e-300) {
      if (o[a] < lo || o[a] > hi) return std::nullopt;
      continue;
    }
    double t0 = (lo - o[a]) / d[a];
    double t1 = (hi - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return std::nullopt;
  }
  if (t_near > 0.0) return t_near;
  if (t_far > 0.0) return t_far;
  return std::nullopt;
}

inline std::optional<double> intersect(const Sphere& s, const Vec3& o, const Vec3& d) {
  const Vec3 oc = o - s.center;
  const double a = d.squaredNorm();
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - a * c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  const double t0 = (-b - sq) / a;
  if (t0 > 0.0) return t0;
  const double t1 = (-b + sq) / a;
  if (t1 > 0.0) return t1;
  return std::nullopt;
}

}  // namespace detail

/// Smallest positive ray parameter t such that o + t d hits the scene.
inline std::optional<double> raycast(const SceneModel& scene, const Vec3& o, const Vec3& d) {
  std::optional<double> best;
  for (const auto& prim : scene.primitives) {
    const auto t = std::visit([&](const auto& s) { return detail::intersect(s, o, d); }, prim);
    if (t && (!best || *t < *best)) best = t;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Surface sampling

namespace detail {

inline Vec3 sample_on(const Plane& p, Rng& rng) {
  const double x = (2.0 * uniform01(rng) - 1.0) * p.half_x;
  const double y = (2.0 * uniform01(rng) - 1.0) * p.half_y;
  return p.center + p.orientation * Vec3(x, y, 0.0);
}

inline Vec3 sample_on(const Box& b, Rng& rng) {
  const Vec3& h = b.half_extent;
  // Face pairs normal to x, y, z with areas 4*hy*hz, 4*hx*hz, 4*hx*hy.
  const double areas[3] = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
  const double total = areas[0] + areas[1] + areas[2];
  double r = uniform01(rng) * total;
  int axis = 2;
  for (int a = 0; a < 3; ++a) {
    if (r < areas[a]) {
      axis = a;
      break;
    }
    r -= areas[a];
  }
  const double side = uniform01(rng) < 0.5 ? -1.0 : 1.0;
  Vec3 local;
  for (int a = 0; a < 3; ++a)
    local[a] = a == axis ? side * h[a] : (2.0 * uniform01(rng) - 1.0) * h[a];
  return b.center + local;
}

inline Vec3 sample_on(const Sphere& s, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec3 d;
  do {
    d = Vec3(normal(rng), normal(rng), normal(rng));
  } while (d.norm() < 1e-12);
  return s.center + s.radius * d.normalized();
}

}  // namespace detail

/// n points uniform by area over all primitive surfaces.
inline PointCloud sample_surface(const SceneModel& scene, std::size_t n, std::uint64_t seed) {
  PointCloud pc;
  if (n == 0 || scene.primitives.empty()) return pc;
  std::vector<double> cdf;
  double acc = 0.0;
  for (const auto& p : scene.primitives) cdf.push_back(acc += surface_area(p));
  auto rng = detail::make_rng(seed, 0x7375);
  pc.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = detail::uniform01(rng) * acc;
    const auto j = std::min<std::size_t>(
        cdf.size() - 1,
        static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin()));
    pc.points.push_back(
        std::visit([&](const auto& s) { return detail::sample_on(s, rng); }, scene.primitives[j]));
  }
  return pc;
}

/// Adds isotropic Gaussian noise to every point (simulated scanner noise).
inline PointCloud perturb_cloud(const PointCloud& pc, double sigma, std::uint64_t seed) {
  if (sigma <= 0.0) return pc;
  auto rng = detail::make_rng(seed, 0x7063);
  std::normal_distribution<double> normal(0.0, sigma);
  PointCloud out = pc;
  for (auto& p : out.points) p += Vec3(normal(rng), normal(rng), normal(rng));
  return out;
}

// ---------------------------------------------------------------------------
// Trajectories

enum class TrajectoryKind { Circle, Line, Waypoints };

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::Circle;
  int frames = 50;
  Vec3 target = Vec3(0.0, 0.0, -1.0);
  // circle
  Vec3 center = Vec3::Zero();
  double radius = 1.5;
  double phase = 0.0;  // radians
  double sweep = 2.0 * std::numbers::pi;
  // line
  Vec3 start = Vec3::Zero();
  Vec3 end = Vec3::Zero();
  // waypoints
  std::vector<Vec3> waypoints;
};

/// Camera poses facing `spec.target`. Circles sweep `spec.sweep` radians
/// without repeating the first pose; lines and waypoint lists include both
/// endpoints and are sampled uniformly by arc length.
inline std::vector<Pose> generate_trajectory(const TrajectorySpec& spec) {
  if (spec.frames < 0) throw InputError("trajectory: frame count must be >= 0");
  std::vector<Vec3> positions;
  positions.reserve(spec.frames);
  switch (spec.kind) {
    case TrajectoryKind::Circle: {
      if (!(spec.radius >= 0.0)) throw InputError("trajectory: negative radius");
      for (int k = 0; k < spec.frames; ++k) {
        const double a = spec.phase + spec.sweep * k / spec.frames;
        positions.push_back(spec.center + spec.radius * Vec3(std::cos(a), std::sin(a), 0.0));
      }
      break;
    }
    case TrajectoryKind::Line:
    case TrajectoryKind::Waypoints: {
      std::vector<Vec3> pts = spec.kind == TrajectoryKind::Line
                                  ? std::vector<Vec3>{spec.start, spec.end}
                                  : spec.waypoints;
      if (pts.empty()) throw InputError("trajectory: waypoint list is empty");
      std::vector<double> cum{0.0};
      for (std::size_t i = 1; i < pts.size(); ++i)
        cum.push_back(cum.back() + (pts[i] - pts[i - 1]).norm());
      const double total = cum.back();
      for (int k = 0; k < spec.frames; ++k) {
        const double s = spec.frames > 1 ? total * k / (spec.frames - 1) : 0.0;
        std::size_t seg = 1;
        while (seg + 1 < cum.size() && cum[seg] < s) ++seg;
        if (pts.size() == 1 || total == 0.0) {
          positions.push_back(pts.front());
          continue;
        }
        const double len = cum[seg] - cum[seg - 1];
        const double f = len > 0.0 ? std::clamp((s - cum[seg - 1]) / len, 0.0, 1.0) : 0.0;
        positions.push_back(pts[seg - 1] + f * (pts[seg] - pts[seg - 1]));
      }
      break;
    }
  }
  std::vector<Pose> poses;
  poses.reserve(positions.size());
  for (const auto& p : positions) poses.emplace_back(p, look_at(p, spec.target));
  return poses;
}

}  // namespace gmmloc
