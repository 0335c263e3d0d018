#pragma once

// Gaussian mixture maps of 3D space: EM fitting, densities and divergences.

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gmmloc/detail/rng.hpp"
#include "gmmloc/errors.hpp"
#include "gmmloc/geometry.hpp"

namespace gmmloc {

/// Smallest admissible covariance eigenvalue, m^2.
inline constexpr double kCovarianceFloor = 1e-6;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct GaussianComponent {
  Vec3 mean = Vec3::Zero();
  Mat3 covariance = Mat3::Identity();
  double weight = 1.0;

  bool operator==(const GaussianComponent&) const = default;
};

namespace detail {

struct ComponentCache {
  Mat3 precision;
  Eigen::Matrix3d chol;  // lower Cholesky factor of the covariance
  double log_det = 0.0;
  double log_norm = 0.0;  // log(weight) - 1.5 log(2 pi) - 0.5 log det
};

inline bool cholesky(const Mat3& cov, Mat3& lower, double& log_det) {
  if (!cov.allFinite()) return false;
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() >
      1e-9 * std::max(1.0, cov.cwiseAbs().maxCoeff()))
    return false;
  Eigen::LLT<Mat3> llt(cov);
  if (llt.info() != Eigen::Success) return false;
  lower = llt.matrixL();
  if (!(lower.diagonal().minCoeff() > 0.0)) return false;
  log_det = 2.0 * lower.diagonal().array().log().sum();
  return std::isfinite(log_det);
}

}  // namespace detail

/// Ordered, immutable mixture. Component index identity is meaningful: the
/// adapted map keeps the index order of its base map.
class GmmMap {
 public:
  GmmMap() = default;

  explicit GmmMap(std::vector<GaussianComponent> components)
      : components_(std::move(components)) {
    if (components_.empty()) throw InputError("GMM map needs at least one component");
    double total = 0.0;
    for (const auto& c : components_) {
      if (!(c.weight > 0.0) || !std::isfinite(c.weight))
        throw InputError("GMM component weight must be positive");
      if (!c.mean.allFinite()) throw InputError("GMM component mean must be finite");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw InputError("GMM weights sum to " + std::to_string(total) + ", expected 1");
    cache_.resize(components_.size());
    for (std::size_t i = 0; i < components_.size(); ++i) {
      auto& cc = cache_[i];
      if (!detail::cholesky(components_[i].covariance, cc.chol, cc.log_det))
        throw NumericalError("GMM component " + std::to_string(i) +
                             ": covariance is not symmetric positive definite");
      cc.precision = cc.chol.transpose().triangularView<Eigen::Upper>().solve(
          cc.chol.triangularView<Eigen::Lower>().solve(Mat3::Identity()));
      cc.precision = 0.5 * (cc.precision + cc.precision.transpose()).eval();
      cc.log_norm = std::log(components_[i].weight) - 1.5 * kLog2Pi - 0.5 * cc.log_det;
    }
  }

  /// Builds a map after rescaling the weights to sum to one.
  static GmmMap normalized(std::vector<GaussianComponent> components) {
    double total = 0.0;
    for (const auto& c : components) total += c.weight;
    for (auto& c : components) c.weight /= total;
    return GmmMap(std::move(components));
  }

  std::size_t size() const { return components_.size(); }
  const GaussianComponent& operator[](std::size_t i) const { return components_[i]; }
  const std::vector<GaussianComponent>& components() const { return components_; }
  const Mat3& precision(std::size_t i) const { return cache_[i].precision; }
  const Mat3& cholesky_factor(std::size_t i) const { return cache_[i].chol; }

  /// Per-component log(weight * density) at p, written into `terms`.
  void log_terms(const Vec3& p, std::span<double> terms) const {
    for (std::size_t i = 0; i < components_.size(); ++i) {
      const Vec3 d = p - components_[i].mean;
      terms[i] = cache_[i].log_norm - 0.5 * d.dot(cache_[i].precision * d);
    }
  }

  /// Stable log-density. Always finite for finite p.
  double log_pdf(const Vec3& p) const {
    double best = -std::numeric_limits<double>::infinity();
    // Small fixed mixtures dominate: avoid a heap allocation per call.
    constexpr std::size_t kStack = 256;
    double stack_terms[kStack];
    std::vector<double> heap_terms;
    std::span<double> terms;
    if (components_.size() <= kStack) {
      terms = std::span<double>(stack_terms, components_.size());
    } else {
      heap_terms.resize(components_.size());
      terms = heap_terms;
    }
    log_terms(p, terms);
    for (double t : terms) best = std::max(best, t);
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - best);
    return best + std::log(sum);
  }

  bool operator==(const GmmMap& other) const { return components_ == other.components_; }

 private:
  std::vector<GaussianComponent> components_;
  std::vector<detail::ComponentCache> cache_;
};

inline double log_pdf(const GmmMap& m, const Vec3& p) { return m.log_pdf(p); }

/// Same mixture translated by t.
inline GmmMap shift(const GmmMap& m, const Vec3& t) {
  auto comps = m.components();
  for (auto& c : comps) c.mean += t;
  return GmmMap(std::move(comps));
}

/// Projects a symmetric matrix onto {eigenvalues >= floor}.
inline Mat3 floor_covariance(const Mat3& cov, double floor = kCovarianceFloor) {
  const Mat3 sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> es(sym);
  Vec3 ev = es.eigenvalues();
  for (int i = 0; i < 3; ++i) ev[i] = std::max(ev[i], floor);
  Mat3 out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

// ---------------------------------------------------------------------------
// EM fitting

struct EmConfig {
  int components = 64;
  int max_iters = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  double covariance_floor = kCovarianceFloor;
};

struct EmFit {
  GmmMap map;
  /// Average per-point log-likelihood of the parameters entering each E-step.
  std::vector<double> avg_loglik;
  /// EM iterations whose M-step re-seeded an empty component.
  std::vector<int> reseeded;
  bool converged = false;
};

namespace detail {

inline Vec3 mean_of(std::span<const Vec3> pts) {
  Vec3 m = Vec3::Zero();
  for (const auto& p : pts) m += p;
  return m / static_cast<double>(pts.size());
}

inline Mat3 covariance_of(std::span<const Vec3> pts, const Vec3& mean) {
  Mat3 c = Mat3::Zero();
  for (const auto& p : pts) {
    const Vec3 d = p - mean;
    c.noalias() += d * d.transpose();
  }
  return c / static_cast<double>(pts.size());
}

// k-means++ seeding; returns indices of the chosen centers.
inline std::vector<std::size_t> kmeans_pp(std::span<const Vec3> pts, int k, Rng& rng) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> centers;
  centers.push_back(std::min<std::size_t>(n - 1, static_cast<std::size_t>(uniform01(rng) * n)));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    const Vec3& c = pts[centers.back()];
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (pts[i] - c).squaredNorm());
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = std::min<std::size_t>(n - 1, static_cast<std::size_t>(uniform01(rng) * n));
    } else {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(pick);
  }
  return centers;
}

}  // namespace detail

/// Fits a K-component mixture by EM with k-means++ initialization.
///
/// The covariance floor is applied by clipping eigenvalues, which keeps each
/// M-step a constrained maximizer; the recorded average log-likelihood is
/// therefore non-decreasing except across iterations listed in `reseeded`.
inline EmFit em_fit(const PointCloud& pc, const EmConfig& cfg) {
  const int k = cfg.components;
  if (k < 1) throw InputError("em_fit: component count must be >= 1");
  if (pc.size() < static_cast<std::size_t>(k))
    throw InputError("em_fit: " + std::to_string(pc.size()) + " points for " +
                     std::to_string(k) + " components");
  for (const auto& p : pc.points)
    if (!p.allFinite()) throw InputError("em_fit: non-finite point");

  const std::span<const Vec3> pts(pc.points);
  const std::size_t n = pts.size();
  auto rng = detail::make_rng(cfg.seed, 0x656d);

  const Vec3 global_mean = detail::mean_of(pts);
  const Mat3 global_cov =
      floor_covariance(detail::covariance_of(pts, global_mean), cfg.covariance_floor);

  // Initial parameters from a hard assignment to the k-means++ centers.
  std::vector<GaussianComponent> comps(k);
  {
    const auto centers = detail::kmeans_pp(pts, k, rng);
    std::vector<std::vector<Vec3>> members(k);
    for (const auto& p : pts) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double d = (p - pts[centers[j]]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      members[best].push_back(p);
    }
    for (int j = 0; j < k; ++j) {
      auto& c = comps[j];
      if (members[j].size() >= 2) {
        c.mean = detail::mean_of(members[j]);
        c.covariance =
            floor_covariance(detail::covariance_of(members[j], c.mean), cfg.covariance_floor);
      } else {
        c.mean = pts[centers[j]];
        c.covariance = global_cov;
      }
      c.weight = std::max<double>(1.0, static_cast<double>(members[j].size())) /
                 static_cast<double>(n);
    }
  }

  EmFit fit;
  GmmMap current = GmmMap::normalized(comps);
  std::vector<double> resp(n * k);
  std::vector<double> terms(k);

  for (int iter = 0;; ++iter) {
    // E-step.
    double ll_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::span<double> row(resp.data() + i * k, k);
      current.log_terms(pts[i], row);
      const double mx = *std::max_element(row.begin(), row.end());
      double s = 0.0;
      for (double& r : row) {
        r = std::exp(r - mx);
        s += r;
      }
      for (double& r : row) r /= s;
      ll_sum += mx + std::log(s);
    }
    const double avg = ll_sum / static_cast<double>(n);
    if (!std::isfinite(avg)) throw NumericalError("em_fit: non-finite log-likelihood");
    const bool improved_little = !fit.avg_loglik.empty() && avg - fit.avg_loglik.back() < cfg.tol;
    fit.avg_loglik.push_back(avg);
    if (improved_little) {
      fit.converged = true;
      break;
    }
    if (iter >= cfg.max_iters) break;

    // M-step.
    bool reseed = false;
    for (int j = 0; j < k; ++j) {
      double nk = 0.0;
      Vec3 mu = Vec3::Zero();
      for (std::size_t i = 0; i < n; ++i) {
        const double r = resp[i * k + j];
        nk += r;
        mu += r * pts[i];
      }
      auto& c = comps[j];
      if (nk < 1e-3) {
        reseed = true;
        c.mean = pts[std::min<std::size_t>(n - 1, static_cast<std::size_t>(detail::uniform01(rng) * n))];
        c.covariance = global_cov;
        c.weight = 1.0 / static_cast<double>(n);
        continue;
      }
      mu /= nk;
      Mat3 cov = Mat3::Zero();
      for (std::size_t i = 0; i < n; ++i) {
        const Vec3 d = pts[i] - mu;
        cov.noalias() += resp[i * k + j] * (d * d.transpose());
      }
      c.mean = mu;
      c.covariance = floor_covariance(cov / nk, cfg.covariance_floor);
      c.weight = nk / static_cast<double>(n);
    }
    if (reseed) fit.reseeded.push_back(iter);
    current = GmmMap::normalized(comps);
  }
  fit.map = std::move(current);
  return fit;
}

// ---------------------------------------------------------------------------
// Divergences (nats)

/// Closed-form KL(a || b) between two 3D Gaussians.
inline double gaussian_kl(const GaussianComponent& a, const GaussianComponent& b) {
  Mat3 la, lb;
  double logdet_a = 0.0, logdet_b = 0.0;
  if (!detail::cholesky(a.covariance, la, logdet_a))
    throw NumericalError("gaussian_kl: first covariance is not SPD");
  if (!detail::cholesky(b.covariance, lb, logdet_b))
    throw NumericalError("gaussian_kl: second covariance is not SPD");
  // tr(Sb^-1 Sa) = ||Lb^-1 La||_F^2
  const Mat3 m = lb.triangularView<Eigen::Lower>().solve(la);
  const Vec3 w = lb.triangularView<Eigen::Lower>().solve(b.mean - a.mean);
  const double kl = 0.5 * (m.squaredNorm() - 3.0 + w.squaredNorm() + logdet_b - logdet_a);
  return std::max(0.0, kl);
}

/// Matched-pair approximation of KL(m || ma) with correspondence by index.
inline double goldberger_kl(const GmmMap& m, const GmmMap& ma) {
  if (m.size() != ma.size())
    throw InputError("goldberger_kl: component counts differ (" + std::to_string(m.size()) +
                     " vs " + std::to_string(ma.size()) + ")");
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    double kl = 0.0;
    try {
      kl = gaussian_kl(m[i], ma[i]);
    } catch (const NumericalError& e) {
      throw NumericalError("goldberger_kl: component " + std::to_string(i) + ": " + e.what());
    }
    total += m[i].weight * (kl + std::log(m[i].weight / ma[i].weight));
  }
  return total;
}

/// Draws n samples from the mixture.
inline std::vector<Vec3> sample(const GmmMap& m, std::size_t n, std::uint64_t seed) {
  auto rng = detail::make_rng(seed, 0x736d);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> cdf(m.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) cdf[i] = (acc += m[i].weight);
  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double r = detail::uniform01(rng) * acc;
    const std::size_t j = std::min<std::size_t>(
        m.size() - 1, static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), r) -
                                                cdf.begin()));
    const Vec3 z(normal(rng), normal(rng), normal(rng));
    out.push_back(m[j].mean + m.cholesky_factor(j) * z);
  }
  return out;
}

struct MonteCarloEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Unbiased sample estimate of KL(m || ma) with x ~ m.
inline MonteCarloEstimate kl_monte_carlo(const GmmMap& m, const GmmMap& ma, std::size_t n,
                                         std::uint64_t seed) {
  if (n < 1) throw InputError("kl_monte_carlo: need at least one sample");
  const auto xs = sample(m, n, seed);
  double sum = 0.0, sum2 = 0.0;
  for (const auto& x : xs) {
    const double f = m.log_pdf(x) - ma.log_pdf(x);
    sum += f;
    sum2 += f * f;
  }
  const double dn = static_cast<double>(n);
  const double mean = sum / dn;
  const double var = n > 1 ? std::max(0.0, (sum2 - dn * mean * mean) / (dn - 1.0)) : 0.0;
  return {mean, std::sqrt(var / dn)};
}

}  // namespace gmmloc
