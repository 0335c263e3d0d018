#pragma once

// Trajectory error, depth-raster SSIM and cloud-to-cloud displacement statistics.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "gmmloc/errors.hpp"
#include "gmmloc/geometry.hpp"

namespace gmmloc {

/// Per-frame position errors, m.
inline std::vector<double> position_errors(const std::vector<Pose>& est,
                                           const std::vector<Pose>& truth) {
  if (est.size() != truth.size())
    throw InputError("trajectory lengths differ (" + std::to_string(est.size()) + " vs " +
                     std::to_string(truth.size()) + ")");
  std::vector<double> e;
  e.reserve(est.size());
  for (std::size_t i = 0; i < est.size(); ++i)
    e.push_back((est[i].position - truth[i].position).norm());
  return e;
}

/// Per-frame orientation geodesic errors, rad.
inline std::vector<double> rotation_errors(const std::vector<Pose>& est,
                                           const std::vector<Pose>& truth) {
  if (est.size() != truth.size()) throw InputError("trajectory lengths differ");
  std::vector<double> e;
  e.reserve(est.size());
  for (std::size_t i = 0; i < est.size(); ++i)
    e.push_back(rotation_angle(est[i].orientation, truth[i].orientation));
  return e;
}

/// Position RMSE, m. Zero for empty trajectories.
inline double trajectory_rmse(const std::vector<Pose>& est, const std::vector<Pose>& truth) {
  const auto e = position_errors(est, truth);
  if (e.empty()) return 0.0;
  double s = 0.0;
  for (double v : e) s += v * v;
  return std::sqrt(s / static_cast<double>(e.size()));
}

struct SsimConfig {
  int window = 8;
  int stride = 8;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over uniform windows after scaling both rasters by the shared
/// maximum of their valid pixels (dynamic range L = 1). Invalid pixels count as 0.
inline double ssim(const DepthRaster& a, const DepthRaster& b, const SsimConfig& cfg = {}) {
  if (a.width != b.width || a.height != b.height)
    throw InputError("ssim: raster sizes differ");
  if (a.width < cfg.window || a.height < cfg.window)
    throw InputError("ssim: raster smaller than the window");
  double peak = 0.0;
  for (const auto* r : {&a, &b})
    for (float z : r->data)
      if (valid_depth(z)) peak = std::max(peak, static_cast<double>(z));
  if (peak <= 0.0) peak = 1.0;
  auto val = [peak](const DepthRaster& r, int u, int v) {
    const float z = r.at(u, v);
    return valid_depth(z) ? static_cast<double>(z) / peak : 0.0;
  };
  const double c1 = cfg.k1 * cfg.k1, c2 = cfg.k2 * cfg.k2;
  const double n = static_cast<double>(cfg.window * cfg.window);
  double total = 0.0;
  int windows = 0;
  for (int v0 = 0; v0 + cfg.window <= a.height; v0 += cfg.stride)
    for (int u0 = 0; u0 + cfg.window <= a.width; u0 += cfg.stride) {
      double sa = 0, sb = 0;
      for (int v = v0; v < v0 + cfg.window; ++v)
        for (int u = u0; u < u0 + cfg.window; ++u) {
          sa += val(a, u, v);
          sb += val(b, u, v);
        }
      const double ma = sa / n, mb = sb / n;
      double vaa = 0, vbb = 0, vab = 0;
      for (int v = v0; v < v0 + cfg.window; ++v)
        for (int u = u0; u < u0 + cfg.window; ++u) {
          const double da = val(a, u, v) - ma, db = val(b, u, v) - mb;
          vaa += da * da;
          vbb += db * db;
          vab += da * db;
        }
      vaa /= n;
      vbb /= n;
      vab /= n;
      total += ((2 * ma * mb + c1) * (2 * vab + c2)) /
               ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
      ++windows;
    }
  return total / windows;
}

struct C2cHistogram {
  std::vector<double> distances;  // per point, index correspondence
  std::vector<double> edges;      // bins + 1 edges over [0, max distance]
  std::vector<std::size_t> counts;

  double mean() const {
    if (distances.empty()) return 0.0;
    double s = 0.0;
    for (double d : distances) s += d;
    return s / static_cast<double>(distances.size());
  }

  double median() const {
    if (distances.empty()) return 0.0;
    std::vector<double> d = distances;
    const std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + mid, d.end());
    if (d.size() % 2 == 1) return d[mid];
    const double hi = d[mid];
    const double lo = *std::max_element(d.begin(), d.begin() + mid);
    return 0.5 * (lo + hi);
  }
};

/// Per-index distances binned uniformly over [0, max]. When every distance is
/// zero all points land in bin 0.
inline C2cHistogram cloud_to_cloud(const PointCloud& ref, const PointCloud& adapted, int bins) {
  if (ref.size() != adapted.size())
    throw InputError("cloud_to_cloud: point counts differ (" + std::to_string(ref.size()) +
                     " vs " + std::to_string(adapted.size()) + ")");
  if (bins < 1) throw InputError("cloud_to_cloud: need at least one bin");
  C2cHistogram h;
  h.distances.reserve(ref.size());
  double mx = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    h.distances.push_back((adapted.points[i] - ref.points[i]).norm());
    mx = std::max(mx, h.distances.back());
  }
  h.counts.assign(bins, 0);
  for (int b = 0; b <= bins; ++b) h.edges.push_back(mx * b / bins);
  for (double d : h.distances) {
    const int b = mx > 0.0 ? std::min(bins - 1, static_cast<int>(d / mx * bins)) : 0;
    ++h.counts[b];
  }
  return h;
}

struct MetricReport {
  double position_rmse = 0.0;
  std::vector<double> position_errors;
  std::vector<double> rotation_errors;
  std::vector<double> ssim;
  std::optional<C2cHistogram> c2c;
};

}  // namespace gmmloc
