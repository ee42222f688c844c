#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace qts;
using testutil::rows;

namespace {

SubspaceModel span_of(const std::string& id, const Matrix& cols) {
  SubspaceModel m;
  m.set_id = id;
  m.basis = oracle::gram_schmidt(cols);
  return m;
}

}  // namespace

TEST(Cosine, HandCases) {
  Vector a(2), b(2);
  a << 3, 4;
  EXPECT_DOUBLE_EQ(cosine_sim(a, a), 1.0);
  a << 1, 0;
  b << 0, 1;
  EXPECT_DOUBLE_EQ(cosine_sim(a, b), 0.0);
  b << 1, 1;
  EXPECT_NEAR(cosine_sim(a, b), 0.707107, 1e-6);
  b << -1, 0;
  EXPECT_DOUBLE_EQ(cosine_sim(a, b), 1.0);  // absolute value
}

TEST(Cosine, Errors) {
  Vector a = Vector::Zero(2), b(2), c(3);
  b << 1, 0;
  c << 1, 0, 0;
  EXPECT_THROW(cosine_sim(a, b), InvalidArgument);
  EXPECT_THROW(cosine_sim(b, c), DimensionMismatch);
}

TEST(MaxMax, HandCase) {
  const auto r = max_max_sim(rows({{1, 0}, {0, 1}}), rows({{0.6, 0.8}}));
  EXPECT_NEAR(r.score, 0.8, 1e-12);
  EXPECT_EQ(*r.index_a, 1);
  EXPECT_EQ(*r.index_b, 0);
}

TEST(MaxMax, SelfAndOrthogonal) {
  std::mt19937_64 rng(7);
  const Matrix a = testutil::random_matrix(rng, 5, 6);
  EXPECT_NEAR(max_max_sim(a, a).score, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(max_max_sim(rows({{1, 0}}), rows({{0, 1}})).score, 0.0);
}

TEST(MaxMax, TiesGoToSmallestIndexPair) {
  const auto r = max_max_sim(rows({{1, 0}, {1, 0}}), rows({{2, 0}, {3, 0}}));
  EXPECT_EQ(*r.index_a, 0);
  EXPECT_EQ(*r.index_b, 0);
}

TEST(MaxMax, MatchesPairEnumeration) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> n(1, 12), d(2, 10);
  for (int trial = 0; trial < 200; ++trial) {
    const int dim = d(rng);
    const Matrix a = testutil::random_matrix(rng, n(rng), dim);
    const Matrix b = testutil::random_matrix(rng, n(rng), dim);
    long ia = -1, ib = -1;
    const double expect = oracle::max_max(a, b, &ia, &ib);
    const auto r = max_max_sim(a, b);
    ASSERT_NEAR(r.score, expect, 1e-9);
    EXPECT_EQ(*r.index_a, ia);
    EXPECT_EQ(*r.index_b, ib);
    EXPECT_NEAR(oracle::abs_cos(r.mode_a, a.row(ia).transpose()), 1.0, 1e-12);
    EXPECT_NEAR(r.mode_a.norm(), 1.0, 1e-12);
  }
}

TEST(MaxMax, SymmetricScore) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    const Matrix a = testutil::random_matrix(rng, 6, 5);
    const Matrix b = testutil::random_matrix(rng, 4, 5);
    EXPECT_DOUBLE_EQ(max_max_sim(a, b).score, max_max_sim(b, a).score);
  }
}

TEST(MaxMax, Errors) {
  EXPECT_THROW(max_max_sim(rows({{1, 0}}), rows({{1, 0, 0}})), DimensionMismatch);
  EXPECT_THROW(max_max_sim(Matrix(0, 2), rows({{1, 0}})), InvalidArgument);
}

TEST(FitSubspace, RankOneDataClipsK) {
  const auto m = fit_subspace(testutil::make_set("s", rows({{2, 0}, {5, 0}})), 6);
  ASSERT_EQ(m.rank(), 1);
  EXPECT_NEAR(m.basis(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(m.basis(1, 0), 0.0, 1e-12);
}

TEST(FitSubspace, Orthonormal) {
  const auto m = fit_subspace(testutil::make_set("s", rows({{1, 0.2}, {0.3, 1}, {1, 1}})), 2);
  ASSERT_EQ(m.rank(), 2);
  EXPECT_TRUE((m.basis.transpose() * m.basis).isApprox(Matrix::Identity(2, 2), 1e-8));
}

TEST(FitSubspace, MaximizesEnergyAgainstGramOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = testutil::random_matrix(rng, 10, 8);
    const auto m = fit_subspace(testutil::make_set("s", x), 6);
    ASSERT_EQ(m.rank(), 6);
    // Independent oracle: eigenvectors of X^T X.
    Eigen::SelfAdjointEigenSolver<Matrix> eig(x.transpose() * x);
    const Matrix top = eig.eigenvectors().rightCols(6);
    const double best = (x * top).squaredNorm();
    EXPECT_NEAR((x * m.basis).squaredNorm(), best, 1e-8 * best);
    // Same span: projectors agree.
    EXPECT_TRUE((m.basis * m.basis.transpose()).isApprox(top * top.transpose(), 1e-8));
    // Any other rank-6 projector captures no more energy.
    for (int r = 0; r < 5; ++r) {
      const Matrix other = oracle::gram_schmidt(testutil::random_matrix(rng, 8, 6));
      EXPECT_LE((x * other).squaredNorm(), best * (1 + 1e-12));
    }
  }
}

TEST(MaxCorr, HandCases) {
  const auto a = span_of("a", rows({{1}, {0}, {0}}));
  const auto b = span_of("b", rows({{0}, {1}, {0}}));
  EXPECT_NEAR(max_corr(a, a).score, 1.0, 1e-12);
  EXPECT_NEAR(max_corr(a, b).score, 0.0, 1e-12);

  const auto c = span_of("c", rows({{1}, {0}}));
  const auto d = span_of("d", rows({{1}, {1}}));
  const auto r = max_corr(c, d);
  EXPECT_NEAR(r.score, 0.707107, 1e-6);
  EXPECT_NEAR(std::abs(r.mode_a(0)), 1.0, 1e-12);
  EXPECT_NEAR(std::abs(r.mode_b(0)), std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(std::abs(r.mode_b(1)), std::sqrt(0.5), 1e-12);
  EXPECT_GE(r.mode_a.dot(r.mode_b), 0.0);
}

TEST(MaxCorr, MatchesUnitVectorGridSearch) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> dim(3, 8), rank(1, 3);
  for (int trial = 0; trial < 40; ++trial) {
    const int d = dim(rng);
    const int ka = std::min(rank(rng), d - 1);
    const int kb = std::min(rank(rng), d - 1);
    const auto a = span_of("a", testutil::random_matrix(rng, d, ka));
    const auto b = span_of("b", testutil::random_matrix(rng, d, kb));
    const double expect = oracle::grid_max_corr(a.basis, b.basis, 400);
    const auto r = max_corr(a, b);
    EXPECT_NEAR(r.score, expect, 1e-3);
    EXPECT_GE(r.score, expect - 1e-12);  // the grid cannot beat the optimum
    // Modes attain the score.
    EXPECT_NEAR(oracle::abs_cos(r.mode_a, r.mode_b), r.score, 1e-9);
  }
}

TEST(VectorSubspace, Cases) {
  const auto s = span_of("s", rows({{1}, {0}, {0}}));
  Vector v(3);
  v << 1, 1, 0;
  const auto r = vector_subspace_sim(v, s);
  EXPECT_NEAR(r.score, 0.707107, 1e-6);
  EXPECT_NEAR(r.mode_b(0), 1.0, 1e-12);
  v << 0, 0, 2;
  EXPECT_THROW(vector_subspace_sim(v, s), DegenerateProjection);
  v << -3, 0, 0;
  const auto in = vector_subspace_sim(v, s);
  EXPECT_NEAR(in.score, 1.0, 1e-12);
  EXPECT_NEAR(std::abs(in.mode_b(0)), 1.0, 1e-12);
}

TEST(Baseline, ParseAndPrint) {
  EXPECT_EQ(parse_baseline("exemplar"), Baseline::exemplar);
  EXPECT_EQ(parse_baseline("subspace"), Baseline::subspace);
  EXPECT_FALSE(parse_baseline("other").has_value());
  EXPECT_STREQ(to_string(Baseline::subspace), "subspace");
}
