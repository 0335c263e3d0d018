#pragma once

// Depth sources: ground-truth ray casting, a parametric degradation model
// emulating a shrunken depth network, file-backed sequences, and the
// learnable per-pixel affine depth correction.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "gmmloc/detail/rng.hpp"
#include "gmmloc/errors.hpp"
#include "gmmloc/geometry.hpp"
#include "gmmloc/scene.hpp"

namespace gmmloc {

/// Axial depth of the nearest primitive hit per pixel; misses are invalid (0).
inline DepthRaster render_ground_truth(const SceneModel& scene, const Pose& pose,
                                       const CameraIntrinsics& k) {
  k.validate();
  DepthRaster out(k.width, k.height, 0.0f);
  const Mat3 r = pose.rotation();
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u) {
      // The camera-frame ray has unit z, so the ray parameter is axial depth.
      const Vec3 dir = r * k.ray(u, v);
      if (const auto t = raycast(scene, pose.position, dir))
        out.at(u, v) = static_cast<float>(*t);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Degradation

struct DegradationParams {
  double scale = 1.0;           // model-size fraction s in (0, 1]
  double gain = 1.0;            // a(s)
  double offset = 0.0;          // b(s), m
  double bias_amplitude = 0.0;  // beta(s), m
  double bias_frequency = 0.5;  // max cycles of each bias sinusoid across the raster
  double noise_sigma = 0.01;    // sigma(s), m
  std::uint64_t seed = 0;

  /// Default schedule: a = 1, b = 0.2(1-s), beta = 0.5(1-s), sigma = 0.05(1-s) + 0.01.
  static DegradationParams for_scale(double s, std::uint64_t seed = 0) {
    if (!(s > 0.0 && s <= 1.0)) throw InputError("degradation scale must lie in (0, 1]");
    DegradationParams p;
    p.scale = s;
    p.gain = 1.0;
    p.offset = 0.2 * (1.0 - s);
    p.bias_amplitude = 0.5 * (1.0 - s);
    p.noise_sigma = 0.05 * (1.0 - s) + 0.01;
    p.seed = seed;
    return p;
  }

  void validate() const {
    if (!(scale > 0.0 && scale <= 1.0)) throw InputError("degradation scale must lie in (0, 1]");
    if (!(noise_sigma >= 0.0)) throw InputError("degradation noise sigma must be >= 0");
  }
};

/// Smooth field in [-1, 1]: mean of three seeded sinusoids over (u, v).
class BiasField {
 public:
  BiasField(std::uint64_t seed, double max_cycles) {
    auto rng = detail::make_rng(seed, 0x6266);
    for (auto& w : waves_) {
      const double dir = 2.0 * std::numbers::pi * detail::uniform01(rng);
      const double cycles = max_cycles * (0.5 + 0.5 * detail::uniform01(rng));
      w.fu = cycles * std::cos(dir);
      w.fv = cycles * std::sin(dir);
      w.phase = 2.0 * std::numbers::pi * detail::uniform01(rng);
    }
  }

  double operator()(double u, double v, int width, int height) const {
    double s = 0.0;
    for (const auto& w : waves_)
      s += std::sin(2.0 * std::numbers::pi * (w.fu * u / width + w.fv * v / height) + w.phase);
    return s / 3.0;
  }

 private:
  struct Wave {
    double fu, fv, phase;
  };
  std::array<Wave, 3> waves_{};
};

/// d' = a d + b + beta B(u, v) + noise on valid pixels. The bias field depends
/// only on params.seed; the noise stream also depends on `frame`.
inline DepthRaster degrade(const DepthRaster& d, const DegradationParams& p,
                           std::uint64_t frame = 0) {
  p.validate();
  const BiasField field(p.seed, p.bias_frequency);
  auto rng = detail::make_rng(p.seed, 0x6e6f, frame);
  std::normal_distribution<double> normal(0.0, 1.0);
  DepthRaster out = d;
  for (int v = 0; v < d.height; ++v)
    for (int u = 0; u < d.width; ++u) {
      if (!d.valid(u, v)) {
        out.at(u, v) = 0.0f;
        continue;
      }
      double z = p.gain * static_cast<double>(d.at(u, v)) + p.offset;
      if (p.bias_amplitude != 0.0) z += p.bias_amplitude * field(u, v, d.width, d.height);
      if (p.noise_sigma > 0.0) z += p.noise_sigma * normal(rng);
      const float zf = static_cast<float>(z);
      out.at(u, v) = valid_depth(zf) ? zf : 0.0f;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Learnable correction

/// Spatially varying affine correction d' = exp(g(u,v)) d + o(u,v), where g
/// and o are bilinear interpolations of a 4 x 4 node grid spanning the raster.
class DepthCorrection {
 public:
  static constexpr int kGrid = 4;
  static constexpr int kNodes = kGrid * kGrid;
  static constexpr int kParams = 2 * kNodes;

  DepthCorrection() {
    log_gain_.fill(0.0);
    offset_.fill(0.0);
  }

  static DepthCorrection identity() { return {}; }

  /// Node (i, j) is column i, row j of the grid.
  double& log_gain(int i, int j) { return log_gain_[j * kGrid + i]; }
  double& offset(int i, int j) { return offset_[j * kGrid + i]; }
  double log_gain(int i, int j) const { return log_gain_[j * kGrid + i]; }
  double offset(int i, int j) const { return offset_[j * kGrid + i]; }

  /// Flat parameter view: [log gains (16), offsets (16)], node index j*4+i.
  double& param(int idx) { return idx < kNodes ? log_gain_[idx] : offset_[idx - kNodes]; }
  double param(int idx) const { return idx < kNodes ? log_gain_[idx] : offset_[idx - kNodes]; }

  struct Stencil {
    std::array<int, 4> node;
    std::array<double, 4> weight;
  };

  static Stencil stencil(double u, double v, int width, int height) {
    auto axis = [](double x, int n, int& i0, double& f) {
      const double g = n > 1 ? x / (n - 1) * (kGrid - 1) : 0.0;
      i0 = std::clamp(static_cast<int>(std::floor(g)), 0, kGrid - 2);
      f = std::clamp(g - i0, 0.0, 1.0);
    };
    int i0, j0;
    double fu, fv;
    axis(u, width, i0, fu);
    axis(v, height, j0, fv);
    Stencil s;
    s.node = {j0 * kGrid + i0, j0 * kGrid + i0 + 1, (j0 + 1) * kGrid + i0,
              (j0 + 1) * kGrid + i0 + 1};
    s.weight = {(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv};
    return s;
  }

  double gain_at(double u, double v, int width, int height) const {
    const auto s = stencil(u, v, width, height);
    double g = 0.0;
    for (int c = 0; c < 4; ++c) g += s.weight[c] * log_gain_[s.node[c]];
    return std::exp(g);
  }

  double offset_at(double u, double v, int width, int height) const {
    const auto s = stencil(u, v, width, height);
    double o = 0.0;
    for (int c = 0; c < 4; ++c) o += s.weight[c] * offset_[s.node[c]];
    return o;
  }

  double corrected(double u, double v, double z, int width, int height) const {
    return gain_at(u, v, width, height) * z + offset_at(u, v, width, height);
  }

  /// Corrected depth and its derivative w.r.t. every flat parameter.
  double corrected_with_gradient(double u, double v, double z, int width, int height,
                                 std::span<double, kParams> grad) const {
    std::fill(grad.begin(), grad.end(), 0.0);
    const auto s = stencil(u, v, width, height);
    double g = 0.0, o = 0.0;
    for (int c = 0; c < 4; ++c) {
      g += s.weight[c] * log_gain_[s.node[c]];
      o += s.weight[c] * offset_[s.node[c]];
    }
    const double gain = std::exp(g);
    for (int c = 0; c < 4; ++c) {
      grad[s.node[c]] += s.weight[c] * gain * z;
      grad[kNodes + s.node[c]] += s.weight[c];
    }
    return gain * z + o;
  }

  bool is_finite() const {
    for (int i = 0; i < kParams; ++i)
      if (!std::isfinite(param(i))) return false;
    return true;
  }

  bool operator==(const DepthCorrection&) const = default;

 private:
  std::array<double, kNodes> log_gain_{};
  std::array<double, kNodes> offset_{};
};

/// Applies the correction to every valid pixel; non-positive results become invalid.
inline DepthRaster apply_correction(const DepthRaster& d, const DepthCorrection& c) {
  DepthRaster out = d;
  for (int v = 0; v < d.height; ++v)
    for (int u = 0; u < d.width; ++u) {
      if (!d.valid(u, v)) {
        out.at(u, v) = 0.0f;
        continue;
      }
      const float z = static_cast<float>(c.corrected(u, v, d.at(u, v), d.width, d.height));
      out.at(u, v) = valid_depth(z) ? z : 0.0f;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Providers

class DepthProvider {
 public:
  virtual ~DepthProvider() = default;
  virtual DepthRaster render(std::size_t frame, const Pose& pose,
                             const CameraIntrinsics& k) const = 0;
};

class GroundTruthProvider final : public DepthProvider {
 public:
  explicit GroundTruthProvider(SceneModel scene) : scene_(std::move(scene)) {}
  DepthRaster render(std::size_t, const Pose& pose, const CameraIntrinsics& k) const override {
    return render_ground_truth(scene_, pose, k);
  }

 private:
  SceneModel scene_;
};

class DegradedProvider final : public DepthProvider {
 public:
  DegradedProvider(std::shared_ptr<const DepthProvider> inner, DegradationParams params)
      : inner_(std::move(inner)), params_(params) {
    params_.validate();
  }
  DepthRaster render(std::size_t frame, const Pose& pose,
                     const CameraIntrinsics& k) const override {
    return degrade(inner_->render(frame, pose, k), params_, frame);
  }

 private:
  std::shared_ptr<const DepthProvider> inner_;
  DegradationParams params_;
};

class FileBackedProvider final : public DepthProvider {
 public:
  explicit FileBackedProvider(std::vector<DepthRaster> frames) : frames_(std::move(frames)) {}
  DepthRaster render(std::size_t frame, const Pose&, const CameraIntrinsics& k) const override {
    if (frame >= frames_.size())
      throw InputError("depth sequence has no frame " + std::to_string(frame));
    check_dimensions(frames_[frame], k);
    return frames_[frame];
  }
  std::size_t size() const { return frames_.size(); }

 private:
  std::vector<DepthRaster> frames_;
};

}  // namespace gmmloc
