#pragma once

// Rigid poses, the pinhole camera, depth rasters and point clouds.
//
// Camera frame convention: x right, y down, z along the optical axis.
// Depth values are axial (the z coordinate of the camera-frame point), not
// ray lengths.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "gmmloc/errors.hpp"

namespace gmmloc {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Camera pose in the world frame: x_world = R(orientation) * x_cam + position.
struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();

  Pose() = default;
  Pose(const Vec3& t, const Quat& q) : position(t), orientation(q.normalized()) {}

  static Pose identity() { return {}; }
  static Pose translation(double x, double y, double z) {
    return {Vec3(x, y, z), Quat::Identity()};
  }

  Mat3 rotation() const { return orientation.toRotationMatrix(); }

  Vec3 apply(const Vec3& p) const { return orientation * p + position; }
};

inline Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.position = a.orientation * b.position + a.position;
  out.orientation = (a.orientation * b.orientation).normalized();
  return out;
}

inline Pose inverse(const Pose& a) {
  Pose out;
  out.orientation = a.orientation.conjugate().normalized();
  out.position = -(out.orientation * a.position);
  return out;
}

/// Rotation by an axis-angle vector (direction = axis, norm = angle).
inline Quat exp_rotation(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-300) return Quat::Identity();
  return Quat(Eigen::AngleAxisd(angle, omega / angle));
}

/// Geodesic angle between two orientations, radians in [0, pi].
inline double rotation_angle(const Quat& a, const Quat& b) {
  const double d = std::abs(a.normalized().dot(b.normalized()));
  return 2.0 * std::acos(std::min(1.0, d));
}

struct CameraIntrinsics {
  double fx = 120.0;
  double fy = 120.0;
  double cx = 80.0;
  double cy = 60.0;
  int width = 160;
  int height = 120;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
      throw ConfigError("intrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0)
      throw ConfigError("intrinsics: raster size must be positive");
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
      throw ConfigError("intrinsics: principal point outside the raster");
  }

  /// Camera-frame ray through pixel (u, v) scaled to unit axial depth.
  Vec3 ray(double u, double v) const {
    return {(u - cx) / fx, (v - cy) / fy, 1.0};
  }
};

inline bool valid_depth(double z) { return std::isfinite(z) && z > 0.0; }

/// Row-major depth grid in meters; entries <= 0 or non-finite are invalid.
struct DepthRaster {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  DepthRaster() = default;
  DepthRaster(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
  float at(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
  bool valid(int u, int v) const { return valid_depth(at(u, v)); }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (float z : data) n += valid_depth(z) ? 1 : 0;
    return n;
  }

  bool operator==(const DepthRaster&) const = default;
};

struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

inline void check_dimensions(const DepthRaster& d, const CameraIntrinsics& k) {
  if (d.width != k.width || d.height != k.height)
    throw ConfigError("depth raster is " + std::to_string(d.width) + "x" +
                      std::to_string(d.height) + " but intrinsics expect " +
                      std::to_string(k.width) + "x" + std::to_string(k.height));
  if (d.data.size() != static_cast<std::size_t>(d.width) * d.height)
    throw ConfigError("depth raster data length does not match its size");
}

/// Pixel sample used by back-projection; keeps the pixel coordinates so that
/// depth corrections can be differentiated per point.
struct PixelSample {
  int u;
  int v;
  double depth;
};

/// Valid pixels on the stride grid, in row-major order.
inline std::vector<PixelSample> stride_samples(const DepthRaster& d, int stride) {
  if (stride < 1) throw ConfigError("stride must be >= 1");
  std::vector<PixelSample> out;
  for (int v = 0; v < d.height; v += stride)
    for (int u = 0; u < d.width; u += stride)
      if (d.valid(u, v)) out.push_back({u, v, static_cast<double>(d.at(u, v))});
  return out;
}

/// Lifts valid stride-grid pixels into camera-frame points.
inline PointCloud back_project(const DepthRaster& d, const CameraIntrinsics& k,
                               int stride = 1) {
  check_dimensions(d, k);
  PointCloud pc;
  for (const auto& s : stride_samples(d, stride))
    pc.points.push_back(s.depth * k.ray(s.u, s.v));
  return pc;
}

/// Pixel coordinates and axial depth of a camera-frame point, if in front of
/// the camera.
struct Projection {
  double u;
  double v;
  double depth;
};

inline std::optional<Projection> project(const Vec3& p_cam, const CameraIntrinsics& k) {
  if (!(p_cam.z() > 0.0)) return std::nullopt;
  return Projection{k.fx * p_cam.x() / p_cam.z() + k.cx,
                    k.fy * p_cam.y() / p_cam.z() + k.cy, p_cam.z()};
}

inline PointCloud transform_cloud(const PointCloud& pc, const Pose& pose) {
  PointCloud out;
  out.points.reserve(pc.size());
  const Mat3 r = pose.rotation();
  for (const auto& p : pc.points) out.points.push_back(r * p + pose.position);
  return out;
}

/// Camera orientation whose optical axis points from `eye` to `target`, with
/// image "down" aligned to -up as far as possible.
inline Quat look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ()) {
  const Vec3 forward = target - eye;
  if (forward.norm() < 1e-12) throw InputError("look_at: eye and target coincide");
  const Vec3 z = forward.normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-9) throw InputError("look_at: viewing direction parallel to up");
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return Quat(r).normalized();
}

}  // namespace gmmloc
