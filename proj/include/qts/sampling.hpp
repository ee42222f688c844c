#ifndef QTS_SAMPLING_HPP
#define QTS_SAMPLING_HPP

// Robust sample selection. A set's exemplars are projected onto their
// dominant kernel principal component (RBF kernel), the 1-D coordinate range
// between the two extreme projections is sampled uniformly, and each sample
// is mapped back to descriptor space through a fixed-point pre-image.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "qts/corpus.hpp"
#include "qts/error.hpp"

namespace qts {

inline constexpr int kDefaultSampleCount = 10;

/// Kernel bandwidth: either fixed, or `auto` (nullopt) for 1 / (2 median^2)
/// of the pairwise Euclidean distances.
using KernelBandwidth = std::optional<double>;

struct KpcaModel {
  Matrix exemplars;   // n x d source data
  double gamma = 0.0;
  Vector alpha;       // top centered-kernel eigenvector, lambda1 * |alpha|^2 = 1
  Vector eigenvalues; // three leading eigenvalues, descending, clamped at 0
  Vector projections; // coordinate of each exemplar on component 1
};

struct PreImageOptions {
  int max_iterations = 100;
  double step_tolerance = 1e-8;
};

namespace detail {

inline Matrix squared_distances(const Matrix& x) {
  const Vector sq = x.rowwise().squaredNorm();
  Matrix d2 = (-2.0 * x * x.transpose()).colwise() + sq;
  d2.rowwise() += sq.transpose();
  return d2.cwiseMax(0.0);
}

inline double median_bandwidth(const Matrix& d2) {
  std::vector<double> dist;
  const Eigen::Index n = d2.rows();
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) dist.push_back(std::sqrt(d2(i, j)));
  }
  auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  double med = *mid;
  if (dist.size() % 2 == 0) {
    med = 0.5 * (med + *std::max_element(dist.begin(), mid));
  }
  if (!(med > 0.0)) {
    // More than half the pairs coincide; fall back to the nonzero distances.
    std::vector<double> nz;
    for (double v : dist) {
      if (v > 0.0) nz.push_back(v);
    }
    if (nz.empty()) return 0.0;
    auto m2 = nz.begin() + static_cast<std::ptrdiff_t>(nz.size() / 2);
    std::nth_element(nz.begin(), m2, nz.end());
    med = *m2;
  }
  return 1.0 / (2.0 * med * med);
}

}  // namespace detail

inline KpcaModel fit_kpca(const Matrix& exemplars, KernelBandwidth gamma = {}) {
  const Eigen::Index n = exemplars.rows();
  if (n < 2) throw InvalidArgument("fit_kpca: need at least two exemplars");
  const Matrix d2 = detail::squared_distances(exemplars);
  KpcaModel m;
  m.exemplars = exemplars;
  m.gamma = gamma ? *gamma : detail::median_bandwidth(d2);
  if (!(m.gamma > 0.0) || !std::isfinite(m.gamma)) {
    if (!gamma) throw DataError("fit_kpca: all exemplars identical");
    throw InvalidArgument("fit_kpca: kernel bandwidth must be positive");
  }
  const Matrix k = (-m.gamma * d2.array()).exp().matrix();
  // Double centering: H K H with H = I - 11^T / n.
  const Vector row_mean = k.rowwise().mean();
  const double total_mean = row_mean.mean();
  Matrix kc = k;
  kc.colwise() -= row_mean;
  kc.rowwise() -= row_mean.transpose();
  kc.array() += total_mean;
  kc = 0.5 * (kc + kc.transpose());

  Eigen::SelfAdjointEigenSolver<Matrix> eig(kc);
  if (eig.info() != Eigen::Success) throw Error("fit_kpca: eigensolver failed");
  const Vector& ev = eig.eigenvalues();  // ascending
  m.eigenvalues = Vector::Zero(3);
  for (Eigen::Index i = 0; i < std::min<Eigen::Index>(3, n); ++i) {
    m.eigenvalues(i) = std::max(0.0, ev(n - 1 - i));
  }
  const double lambda1 = m.eigenvalues(0);
  if (!(lambda1 > 1e-12 * static_cast<double>(n))) {
    throw DataError("fit_kpca: all exemplars identical (zero kernel variance)");
  }
  Vector u = eig.eigenvectors().col(n - 1);
  Eigen::Index idx = 0;
  u.cwiseAbs().maxCoeff(&idx);
  if (u(idx) < 0) u = -u;
  m.alpha = u / std::sqrt(lambda1);
  m.projections = kc * m.alpha;
  return m;
}

inline KpcaModel fit_kpca(const FaceSet& s, KernelBandwidth gamma = {}) {
  return fit_kpca(s.exemplars, gamma);
}

/// (lambda2 / lambda1, lambda3 / lambda1) of the centered kernel matrix.
inline std::pair<double, double> energy_report(const FaceSet& s,
                                               KernelBandwidth gamma = {}) {
  const KpcaModel m = fit_kpca(s, gamma);
  const double l1 = m.eigenvalues(0);
  return {std::clamp(m.eigenvalues(1) / l1, 0.0, 1.0),
          std::clamp(m.eigenvalues(2) / l1, 0.0, 1.0)};
}

/// Index of the exemplar whose projection is nearest `z` (lowest index wins
/// ties).
inline Eigen::Index nearest_projection(const KpcaModel& m, double z) {
  Eigen::Index best = 0;
  double best_d = std::abs(m.projections(0) - z);
  for (Eigen::Index i = 1; i < m.projections.size(); ++i) {
    const double d = std::abs(m.projections(i) - z);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

/// Fixed-point pre-image of the point at coordinate `z` on the leading
/// kernel component. That point expands as sum_i c_i phi(x_i) with
/// c_i = z alpha_i + (1 - z sum_j alpha_j) / n. Falls back to the nearest
/// source exemplar if the iteration degenerates or does not converge.
inline Vector pre_image(const KpcaModel& m, double z,
                        const PreImageOptions& opt = {}) {
  const Eigen::Index n = m.exemplars.rows();
  const Eigen::Index start = nearest_projection(m, z);
  const Vector fallback = m.exemplars.row(start).transpose();
  const Vector c =
      (z * m.alpha).array() + (1.0 - z * m.alpha.sum()) / static_cast<double>(n);

  Vector x = fallback;
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Vector d2 = (m.exemplars.rowwise() - x.transpose()).rowwise().squaredNorm();
    const Vector kx = (-m.gamma * d2.array()).exp().matrix();
    if (kx.maxCoeff() < 1e-300) return fallback;
    const Vector w = c.cwiseProduct(kx);
    const double mass = w.cwiseAbs().sum();
    const double denom = w.sum();
    // All weights vanish, or positive and negative weights cancel.
    if (mass < 1e-300 || !(std::abs(denom) > 1e-8 * mass)) return fallback;
    const Vector next = m.exemplars.transpose() * w / denom;
    if (!next.allFinite()) return fallback;
    const double step = (next - x).norm();
    x = next;
    if (step < opt.step_tolerance * std::max(1.0, x.norm())) {
      if (!(x.norm() > 0.0)) return fallback;
      return x;
    }
  }
  return fallback;
}

/// `n` coordinates spaced uniformly over [min z, max z], endpoints exact.
inline std::vector<double> sample_coordinates(const KpcaModel& m, int n) {
  const double lo = m.projections.minCoeff();
  const double hi = m.projections.maxCoeff();
  std::vector<double> z(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    z[i] = (i == n - 1) ? hi : lo + (hi - lo) * static_cast<double>(i) / (n - 1);
  }
  return z;
}

/// Replaces a large set by `n_samples` exemplars spaced uniformly (endpoints
/// included) along its leading kernel component. Sets with at most
/// `n_samples` exemplars are returned unchanged.
inline FaceSet robust_select(const FaceSet& s, int n_samples = kDefaultSampleCount,
                             KernelBandwidth gamma = {}) {
  if (n_samples < 2) throw InvalidArgument("robust_select: n_samples must be >= 2");
  if (s.size() <= n_samples) return s;
  const KpcaModel m = fit_kpca(s, gamma);
  const std::vector<double> targets = sample_coordinates(m, n_samples);
  FaceSet out;
  out.id = s.id;
  out.source_path = s.source_path;
  out.exemplars.resize(n_samples, s.dim());
  for (int i = 0; i < n_samples; ++i) {
    out.exemplars.row(i) = pre_image(m, targets[i]).transpose();
  }
  return out;
}

}  // namespace qts

#endif  // QTS_SAMPLING_HPP
