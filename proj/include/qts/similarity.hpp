#ifndef QTS_SIMILARITY_HPP
#define QTS_SIMILARITY_HPP

// Baseline set similarities. Both expose the pair of "most similar modes"
// through which the score was attained: the argmax exemplars for max-max
// cosine, the first canonical vector pair for subspace correlation.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "qts/corpus.hpp"
#include "qts/error.hpp"

namespace qts {

/// Which set representation and similarity a pipeline runs on.
enum class Baseline { exemplar, subspace };

inline const char* to_string(Baseline b) {
  return b == Baseline::exemplar ? "exemplar" : "subspace";
}

inline std::optional<Baseline> parse_baseline(std::string_view s) {
  if (s == "exemplar") return Baseline::exemplar;
  if (s == "subspace") return Baseline::subspace;
  return std::nullopt;
}

/// Orthonormal basis (d x k) of a set's dominant linear subspace.
struct SubspaceModel {
  std::string set_id;
  Matrix basis;

  Eigen::Index dim() const { return basis.rows(); }
  Eigen::Index rank() const { return basis.cols(); }
};

struct MatchResult {
  double score = 0.0;
  Vector mode_a;
  Vector mode_b;
  std::optional<Eigen::Index> index_a;
  std::optional<Eigen::Index> index_b;
};

inline constexpr int kDefaultSubspaceRank = 6;
// Singular values below this fraction of the largest are treated as zero.
inline constexpr double kRankTolerance = 1e-10;
inline constexpr double kDegenerateProjection = 1e-12;

namespace detail {

inline void require_same_dim(Eigen::Index a, Eigen::Index b) {
  if (a != b) throw DimensionMismatch(a, b);
}

inline double unit_clamp(double v) { return std::clamp(v, 0.0, 1.0); }

// Flip `v` so its largest-magnitude entry is positive.
inline void fix_sign(Eigen::Ref<Vector> v) {
  Eigen::Index idx = 0;
  v.cwiseAbs().maxCoeff(&idx);
  if (v(idx) < 0) v = -v;
}

inline Matrix normalized_rows(const Matrix& m) {
  return m.rowwise().normalized();
}

}  // namespace detail

/// |u.v| / (|u| |v|).
template <class A, class B>
double cosine_sim(const Eigen::MatrixBase<A>& u, const Eigen::MatrixBase<B>& v) {
  detail::require_same_dim(u.size(), v.size());
  const double nu = u.norm();
  const double nv = v.norm();
  if (!(nu > 0.0) || !(nv > 0.0)) {
    throw InvalidArgument("cosine_sim: zero-norm vector");
  }
  return detail::unit_clamp(std::abs(u.dot(v)) / (nu * nv));
}

/// Maximum absolute cosine over all exemplar pairs (rows of `a` x rows of
/// `b`). Ties resolve to the lexicographically smallest (index_a, index_b).
inline MatchResult max_max_sim(const Matrix& a, const Matrix& b) {
  detail::require_same_dim(a.cols(), b.cols());
  if (a.rows() == 0 || b.rows() == 0) {
    throw InvalidArgument("max_max_sim: empty set");
  }
  const Matrix an = detail::normalized_rows(a);
  const Matrix bn = detail::normalized_rows(b);
  const Matrix cos = (an * bn.transpose()).cwiseAbs();
  Eigen::Index best_i = 0;
  Eigen::Index best_j = 0;
  double best = -1.0;
  for (Eigen::Index i = 0; i < cos.rows(); ++i) {
    for (Eigen::Index j = 0; j < cos.cols(); ++j) {
      if (cos(i, j) > best) {
        best = cos(i, j);
        best_i = i;
        best_j = j;
      }
    }
  }
  MatchResult r;
  r.score = detail::unit_clamp(best);
  r.mode_a = an.row(best_i).transpose();
  r.mode_b = bn.row(best_j).transpose();
  r.index_a = best_i;
  r.index_b = best_j;
  return r;
}

inline MatchResult max_max_sim(const FaceSet& a, const FaceSet& b) {
  return max_max_sim(a.exemplars, b.exemplars);
}

/// PCA basis of the uncentered exemplar matrix: top-k right singular vectors
/// of the n x d data, ordered by descending singular value. `k` is clipped to
/// the numerical rank.
inline SubspaceModel fit_subspace(const FaceSet& s,
                                  int k = kDefaultSubspaceRank) {
  if (s.size() < 1) throw InvalidArgument("fit_subspace: empty set");
  if (k < 1) throw InvalidArgument("fit_subspace: k must be positive");
  Eigen::BDCSVD<Matrix> svd(s.exemplars, Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  Eigen::Index rank = 0;
  const double floor = kRankTolerance * sv(0);
  while (rank < sv.size() && sv(rank) > floor) ++rank;
  const Eigen::Index cols = std::min<Eigen::Index>(k, std::max<Eigen::Index>(rank, 1));
  SubspaceModel m;
  m.set_id = s.id;
  m.basis = svd.matrixV().leftCols(cols);
  for (Eigen::Index c = 0; c < cols; ++c) detail::fix_sign(m.basis.col(c));
  return m;
}

/// First canonical correlation between two subspaces and its canonical
/// vector pair. The pair's signs make their mutual cosine nonnegative.
inline MatchResult max_corr(const SubspaceModel& a, const SubspaceModel& b) {
  detail::require_same_dim(a.dim(), b.dim());
  const Matrix cross = a.basis.transpose() * b.basis;
  Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  MatchResult r;
  r.score = detail::unit_clamp(svd.singularValues()(0));
  r.mode_a = (a.basis * svd.matrixU().col(0)).normalized();
  r.mode_b = (b.basis * svd.matrixV().col(0)).normalized();
  Eigen::Index idx = 0;
  r.mode_a.cwiseAbs().maxCoeff(&idx);
  if (r.mode_a(idx) < 0) r.mode_a = -r.mode_a;
  if (r.mode_a.dot(r.mode_b) < 0) r.mode_b = -r.mode_b;
  return r;
}

/// A single vector against a subspace: cosine between `v` and its projection.
/// Throws DegenerateProjection when `v` is numerically orthogonal to it.
template <class V>
MatchResult vector_subspace_sim(const Eigen::MatrixBase<V>& v,
                                const SubspaceModel& s) {
  detail::require_same_dim(v.size(), s.dim());
  const double nv = v.norm();
  if (!(nv > 0.0)) throw InvalidArgument("vector_subspace_sim: zero-norm vector");
  const Vector unit = v / nv;
  const Vector coeffs = s.basis.transpose() * unit;
  const double pnorm = coeffs.norm();
  if (pnorm < kDegenerateProjection) {
    throw DegenerateProjection("projection onto subspace of '" + s.set_id +
                               "' vanishes");
  }
  MatchResult r;
  r.score = detail::unit_clamp(pnorm);
  r.mode_a = unit;
  r.mode_b = (s.basis * coeffs) / pnorm;
  return r;
}

}  // namespace qts

#endif  // QTS_SIMILARITY_HPP
