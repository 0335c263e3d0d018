#pragma once

// Joint adaptation of the map (residual MLP on component means) and the depth
// correction, by gradient descent on
//
//   L = -sum_frames mean_points log M_A(x(theta_D)) + lambda * KL_matched(M, M_A)
//
// where x are corrected depth pixels back-projected at the ground-truth pose.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gmmloc/depth.hpp"
#include "gmmloc/detail/parallel.hpp"
#include "gmmloc/detail/rng.hpp"
#include "gmmloc/errors.hpp"
#include "gmmloc/geometry.hpp"
#include "gmmloc/gmm.hpp"

namespace gmmloc {

/// Residual point transform x -> x + W2 tanh(W1 x + b1) + b2 (3 -> H -> 3).
class MlpTransform {
 public:
  using Matrix = Eigen::MatrixXd;
  using Vector = Eigen::VectorXd;

  MlpTransform() : MlpTransform(128) {}

  /// All-zero parameters: the identity transform.
  explicit MlpTransform(int hidden)
      : w1_(Matrix::Zero(hidden, 3)),
        b1_(Vector::Zero(hidden)),
        w2_(Matrix::Zero(3, hidden)),
        b2_(Vector::Zero(3)) {}

  /// Random hidden layer, zero output layer: starts at the identity transform.
  static MlpTransform initialized(int hidden, std::uint64_t seed, double scale = 0.5) {
    MlpTransform m(hidden);
    auto rng = detail::make_rng(seed, 0x6d6c);
    std::normal_distribution<double> normal(0.0, scale);
    for (Eigen::Index i = 0; i < m.w1_.size(); ++i) m.w1_.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < m.b1_.size(); ++i) m.b1_[i] = normal(rng);
    return m;
  }

  int hidden() const { return static_cast<int>(b1_.size()); }
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(w1_.size() + b1_.size() + w2_.size() + b2_.size());
  }

  Matrix& w1() { return w1_; }
  Vector& b1() { return b1_; }
  Matrix& w2() { return w2_; }
  Vector& b2() { return b2_; }
  const Matrix& w1() const { return w1_; }
  const Vector& b1() const { return b1_; }
  const Matrix& w2() const { return w2_; }
  const Vector& b2() const { return b2_; }

  Vec3 displacement(const Vec3& x) const {
    const Vector h = (w1_ * x + b1_).array().tanh();
    return w2_ * h + b2_;
  }

  Vec3 apply(const Vec3& x) const { return x + displacement(x); }

  /// Flat order: W1 (column-major), b1, W2 (column-major), b2.
  double& param(std::size_t i) { return const_cast<double&>(std::as_const(*this).param(i)); }
  const double& param(std::size_t i) const {
    const auto n1 = static_cast<std::size_t>(w1_.size());
    const auto n2 = n1 + static_cast<std::size_t>(b1_.size());
    const auto n3 = n2 + static_cast<std::size_t>(w2_.size());
    if (i < n1) return w1_.data()[i];
    if (i < n2) return b1_.data()[i - n1];
    if (i < n3) return w2_.data()[i - n2];
    return b2_.data()[i - n3];
  }

  /// Accumulates d(g . displacement(x)) / d(params) into `grad` (flat order).
  void backward(const Vec3& x, const Vec3& g, std::span<double> grad) const {
    const Vector h = (w1_ * x + b1_).array().tanh();
    const Eigen::Index hn = b1_.size();
    const Vector dh = w2_.transpose() * g;
    const Vector da = dh.array() * (1.0 - h.array().square());
    double* gw1 = grad.data();
    double* gb1 = gw1 + w1_.size();
    double* gw2 = gb1 + hn;
    double* gb2 = gw2 + w2_.size();
    for (int c = 0; c < 3; ++c)
      for (Eigen::Index r = 0; r < hn; ++r) gw1[c * hn + r] += da[r] * x[c];
    for (Eigen::Index r = 0; r < hn; ++r) gb1[r] += da[r];
    for (Eigen::Index c = 0; c < hn; ++c)
      for (int r = 0; r < 3; ++r) gw2[c * 3 + r] += g[r] * h[c];
    for (int r = 0; r < 3; ++r) gb2[r] += g[r];
  }

  bool is_finite() const {
    return w1_.allFinite() && b1_.allFinite() && w2_.allFinite() && b2_.allFinite();
  }

  bool operator==(const MlpTransform& o) const {
    return w1_ == o.w1_ && b1_ == o.b1_ && w2_ == o.w2_ && b2_ == o.b2_;
  }

 private:
  Matrix w1_;
  Vector b1_;
  Matrix w2_;
  Vector b2_;
};

struct AdaptedMap {
  GmmMap base;
  GmmMap adapted;
};

/// Moves every component mean by the MLP residual; covariances, weights and
/// index order are copied from the base.
inline AdaptedMap adapt_map(const MlpTransform& mlp, const GmmMap& base) {
  auto comps = base.components();
  for (auto& c : comps) c.mean = mlp.apply(c.mean);
  return {base, GmmMap(std::move(comps))};
}

inline PointCloud adapt_point_cloud(const MlpTransform& mlp, const PointCloud& pc) {
  PointCloud out;
  out.points.reserve(pc.size());
  for (const auto& p : pc.points) out.points.push_back(mlp.apply(p));
  return out;
}

/// Mean Euclidean distance between base and adapted component means.
inline double mean_displacement(const AdaptedMap& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.base.size(); ++i)
    s += (m.adapted[i].mean - m.base[i].mean).norm();
  return s / static_cast<double>(m.base.size());
}

struct TrainingFrame {
  DepthRaster depth;  // uncorrected input depth
  Pose pose;          // ground-truth camera pose
};

struct TrainingBatch {
  std::vector<TrainingFrame> frames;
  CameraIntrinsics intrinsics;
};

enum class Optimizer { GradientDescent, Adam };

struct TrainConfig {
  double lambda = 100.0;
  double learning_rate = 1e-2;      // depth correction parameters
  double mlp_learning_rate = 1e-3;  // map transform parameters
  int iterations = 300;
  int batch_size = 0;  // frames per step; 0 = whole batch
  int stride = 8;
  std::uint64_t seed = 0;
  int hidden = 128;
  Optimizer optimizer = Optimizer::Adam;
  int threads = 1;
};

struct LossValue {
  double nll = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

/// Gradient of the loss, split by parameter block.
struct LossGradient {
  std::vector<double> mlp;                             // flat MlpTransform order
  std::array<double, DepthCorrection::kParams> depth{};  // flat DepthCorrection order
};

namespace detail {

struct FrameTerms {
  double nll = 0.0;
  std::vector<Vec3> mean_grad;  // dNLL/d adapted mean, per component
  std::array<double, DepthCorrection::kParams> depth{};
};

inline FrameTerms frame_terms(const TrainingFrame& f, const CameraIntrinsics& k,
                              const GmmMap& adapted, const DepthCorrection& corr, int stride,
                              bool want_grad) {
  FrameTerms out;
  const std::size_t kc = adapted.size();
  if (want_grad) out.mean_grad.assign(kc, Vec3::Zero());
  const auto samples = stride_samples(f.depth, stride);
  if (samples.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  const Mat3 r = f.pose.rotation();
  std::vector<double> terms(kc);
  std::array<double, DepthCorrection::kParams> dz{};
  for (const auto& s : samples) {
    const Vec3 ray = k.ray(s.u, s.v);
    const double z = want_grad
                         ? corr.corrected_with_gradient(s.u, s.v, s.depth, f.depth.width,
                                                        f.depth.height, dz)
                         : corr.corrected(s.u, s.v, s.depth, f.depth.width, f.depth.height);
    const Vec3 world_ray = r * ray;
    const Vec3 x = z * world_ray + f.pose.position;
    adapted.log_terms(x, terms);
    double mx = -std::numeric_limits<double>::infinity();
    for (double t : terms) mx = std::max(mx, t);
    double sum = 0.0;
    for (double& t : terms) sum += (t = std::exp(t - mx));
    out.nll -= (mx + std::log(sum)) * inv_n;
    if (!want_grad) continue;
    // dNLL/dx = inv_n * sum_i gamma_i P_i (x - mu_i)
    Vec3 gx = Vec3::Zero();
    for (std::size_t i = 0; i < kc; ++i) {
      const double gamma = terms[i] / sum;
      if (gamma == 0.0) continue;
      const Vec3 pd = adapted.precision(i) * (x - adapted[i].mean);
      gx += gamma * pd;
      out.mean_grad[i] -= inv_n * gamma * pd;
    }
    gx *= inv_n;
    const double dl_dz = gx.dot(world_ray);
    for (int p = 0; p < DepthCorrection::kParams; ++p) out.depth[p] += dl_dz * dz[p];
  }
  return out;
}

inline std::vector<const TrainingFrame*> all_frames(const TrainingBatch& b) {
  std::vector<const TrainingFrame*> v;
  for (const auto& f : b.frames) v.push_back(&f);
  return v;
}

inline LossValue evaluate(const MlpTransform& mlp, const DepthCorrection& corr,
                          const std::vector<const TrainingFrame*>& frames,
                          const CameraIntrinsics& k, const GmmMap& base, double lambda,
                          int stride, int threads, LossGradient* grad) {
  if (frames.empty()) throw InputError("loss: empty training batch");
  const AdaptedMap am = adapt_map(mlp, base);
  std::vector<FrameTerms> per(frames.size());
  detail::parallel_for(frames.size(), threads, [&](std::size_t i) {
    per[i] = frame_terms(*frames[i], k, am.adapted, corr, stride, grad != nullptr);
  });
  LossValue lv;
  for (const auto& t : per) lv.nll += t.nll;
  lv.kl = goldberger_kl(base, am.adapted);
  lv.total = lv.nll + lambda * lv.kl;
  if (!grad) return lv;

  grad->mlp.assign(mlp.parameter_count(), 0.0);
  grad->depth.fill(0.0);
  for (const auto& t : per)
    for (int p = 0; p < DepthCorrection::kParams; ++p) grad->depth[p] += t.depth[p];
  for (std::size_t i = 0; i < base.size(); ++i) {
    Vec3 g = Vec3::Zero();
    for (const auto& t : per) g += t.mean_grad[i];
    // With equal covariances and weights the matched KL is a quadratic form.
    g += lambda * base[i].weight * (base.precision(i) * (am.adapted[i].mean - base[i].mean));
    mlp.backward(base[i].mean, g, grad->mlp);
  }
  return lv;
}

}  // namespace detail

inline LossValue loss(const MlpTransform& mlp, const DepthCorrection& corr,
                      const TrainingBatch& batch, const GmmMap& base, double lambda,
                      int stride = 8) {
  return detail::evaluate(mlp, corr, detail::all_frames(batch), batch.intrinsics, base, lambda,
                          stride, 1, nullptr);
}

inline LossGradient gradients(const MlpTransform& mlp, const DepthCorrection& corr,
                              const TrainingBatch& batch, const GmmMap& base, double lambda,
                              int stride = 8, LossValue* value = nullptr) {
  LossGradient g;
  const auto lv = detail::evaluate(mlp, corr, detail::all_frames(batch), batch.intrinsics,
                                   base, lambda, stride, 1, &g);
  if (value) *value = lv;
  return g;
}

struct TrainResult {
  MlpTransform mlp;
  DepthCorrection correction;
  std::vector<double> loss_history;  // loss before each step, then the final loss
  bool diverged = false;
  std::string diagnostic;
};

/// Minimizes the joint loss over both parameter blocks. On a non-finite loss
/// or parameter the last finite state is returned with `diverged` set.
inline TrainResult train(const TrainingBatch& batch, const GmmMap& base, const TrainConfig& cfg,
                         const MlpTransform* init_mlp = nullptr) {
  if (batch.frames.empty()) throw InputError("train: empty training batch");
  if (!(cfg.lambda >= 0.0)) throw InputError("train: lambda must be >= 0");
  if (!(cfg.learning_rate >= 0.0) || !(cfg.mlp_learning_rate >= 0.0))
    throw InputError("train: learning rates must be >= 0");
  TrainResult res;
  res.mlp = init_mlp ? *init_mlp : MlpTransform::initialized(cfg.hidden, cfg.seed);
  res.correction = DepthCorrection::identity();

  const std::size_t nm = res.mlp.parameter_count();
  const std::size_t nd = DepthCorrection::kParams;
  std::vector<double> m1(nm + nd, 0.0), m2(nm + nd, 0.0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  const auto frames = detail::all_frames(batch);
  const std::size_t bs = cfg.batch_size > 0
                             ? std::min<std::size_t>(cfg.batch_size, frames.size())
                             : frames.size();
  const bool full_batch = bs == frames.size();
  auto batch_for = [&](int it) {
    if (full_batch) return frames;
    std::vector<const TrainingFrame*> sel;
    for (std::size_t j = 0; j < bs; ++j)
      sel.push_back(frames[(static_cast<std::size_t>(it) * bs + j) % frames.size()]);
    return sel;
  };
  auto eval_at = [&](const MlpTransform& m, const DepthCorrection& c, int it, LossGradient* g) {
    return detail::evaluate(m, c, batch_for(it), batch.intrinsics, base, cfg.lambda, cfg.stride,
                            cfg.threads, it < cfg.iterations ? g : nullptr);
  };

  LossGradient g;
  auto lv = eval_at(res.mlp, res.correction, 0, &g);
  if (!std::isfinite(lv.total)) {
    res.diverged = true;
    res.diagnostic = "non-finite loss at iteration 0";
    return res;
  }
  // Full-batch steps that raise the loss are halved and retried from restarted
  // moments; the scale recovers by doubling after each accepted step.
  constexpr int kMaxBacktracks = 40;
  double scale = 1.0;
  int adam_t = 0;
  std::vector<double> dir(nm + nd);
  auto grad_of = [&](std::size_t p) { return p < nm ? g.mlp[p] : g.depth[p - nm]; };
  auto lr_of = [&](std::size_t p) { return p < nm ? cfg.mlp_learning_rate : cfg.learning_rate; };
  auto direction = [&] {
    for (std::size_t p = 0; p < nm + nd; ++p) {
      if (cfg.optimizer == Optimizer::GradientDescent) {
        dir[p] = lr_of(p) * grad_of(p);
        continue;
      }
      const double mh = m1[p] / (1.0 - std::pow(kBeta1, adam_t));
      const double vh = m2[p] / (1.0 - std::pow(kBeta2, adam_t));
      dir[p] = lr_of(p) * mh / (std::sqrt(vh) + kEps);
    }
  };
  for (int it = 0; it < cfg.iterations; ++it) {
    res.loss_history.push_back(lv.total);
    ++adam_t;
    for (std::size_t p = 0; p < nm + nd; ++p) {
      m1[p] = kBeta1 * m1[p] + (1.0 - kBeta1) * grad_of(p);
      m2[p] = kBeta2 * m2[p] + (1.0 - kBeta2) * grad_of(p) * grad_of(p);
    }
    direction();

    LossGradient next_g;
    for (int attempt = 0;; ++attempt) {
      MlpTransform mlp = res.mlp;
      DepthCorrection corr = res.correction;
      for (std::size_t p = 0; p < nm; ++p) mlp.param(p) -= scale * dir[p];
      for (std::size_t p = 0; p < nd; ++p) corr.param(static_cast<int>(p)) -= scale * dir[nm + p];
      if (!mlp.is_finite() || !corr.is_finite()) {
        res.diverged = true;
        res.diagnostic = "non-finite parameters after iteration " + std::to_string(it);
        return res;
      }
      const auto next = eval_at(mlp, corr, it + 1, &next_g);
      if (!std::isfinite(next.total)) {
        res.diverged = true;
        res.diagnostic = "non-finite loss at iteration " + std::to_string(it + 1);
        return res;
      }
      if (!full_batch || next.total <= lv.total || attempt == kMaxBacktracks) {
        res.mlp = std::move(mlp);
        res.correction = corr;
        lv = next;
        break;
      }
      if (attempt == 0 && adam_t > 1) {
        adam_t = 1;
        for (std::size_t p = 0; p < nm + nd; ++p) {
          m1[p] = (1.0 - kBeta1) * grad_of(p);
          m2[p] = (1.0 - kBeta2) * grad_of(p) * grad_of(p);
        }
        direction();
      } else {
        scale *= 0.5;
      }
    }
    g = std::move(next_g);
    scale = std::min(1.0, 2.0 * scale);
  }
  res.loss_history.push_back(lv.total);
  return res;
}

}  // namespace gmmloc
