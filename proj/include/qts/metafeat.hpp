#ifndef QTS_METAFEAT_HPP
#define QTS_METAFEAT_HPP

// Transitivity meta-features.
//
// For a (query, target | proxy) triplet the feature is
//   s1  query-proxy similarity
//   s2  query-target similarity
//   s3  proxy-target similarity
//   s4  similarity of the proxy mode nearest the query and the proxy mode
//       nearest the target
//   s5  similarity of the target mode nearest the query and the target mode
//       nearest the proxy
//
// Training features come from (reference, proxy) pairs only. Exemplar pairs
// drawn from the reference stand in for same-identity query/target pairs
// (label 1); exemplar pairs drawn from the proxy stand in for
// different-identity ones (label 0).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "qts/corpus.hpp"
#include "qts/error.hpp"
#include "qts/similarity.hpp"

namespace qts {

using FeatureVector = std::array<double, 5>;

struct TransitivityFeature {
  FeatureVector s{};
  std::optional<double> label;
  // Training: target_id is the reference set. Retrieval: all three are set.
  std::string query_id;
  std::string target_id;
  std::string proxy_id;
  // Exemplar indices of the designated pair within its source set
  // (reference for positives, proxy for negatives); -1 when not applicable.
  Eigen::Index first_index = -1;
  Eigen::Index second_index = -1;
};

namespace detail {

inline FeatureVector assemble(double s1, double s2, double s3,
                              const Vector& f_pq, const Vector& f_pt,
                              const Vector& f_tq, const Vector& f_tp) {
  return {s1, s2, s3, cosine_sim(f_pq, f_pt), cosine_sim(f_tq, f_tp)};
}

}  // namespace detail

/// Retrieval-time feature over exemplar sets.
inline TransitivityFeature feature_exemplar(const FaceSet& query,
                                            const FaceSet& target,
                                            const FaceSet& proxy) {
  const MatchResult qp = max_max_sim(query, proxy);   // (f_qp, f_pq)
  const MatchResult qt = max_max_sim(query, target);  // (f_qt, f_tq)
  const MatchResult pt = max_max_sim(proxy, target);  // (f_pt, f_tp)
  TransitivityFeature f;
  f.s = detail::assemble(qp.score, qt.score, pt.score, qp.mode_b, pt.mode_a,
                         qt.mode_b, pt.mode_b);
  f.query_id = query.id;
  f.target_id = target.id;
  f.proxy_id = proxy.id;
  return f;
}

/// Same as feature_exemplar, with the proxy-target match precomputed (it does
/// not depend on the query).
inline FeatureVector feature_exemplar(const Matrix& query, const Matrix& target,
                                      const Matrix& proxy,
                                      const MatchResult& proxy_target) {
  const MatchResult qp = max_max_sim(query, proxy);
  const MatchResult qt = max_max_sim(query, target);
  return detail::assemble(qp.score, qt.score, proxy_target.score, qp.mode_b,
                          proxy_target.mode_a, qt.mode_b, proxy_target.mode_b);
}

/// Retrieval-time feature over subspace representations; modes are the
/// first canonical vector pairs.
inline FeatureVector feature_subspace(const SubspaceModel& query,
                                      const SubspaceModel& target,
                                      const SubspaceModel& proxy,
                                      const MatchResult& proxy_target) {
  const MatchResult qp = max_corr(query, proxy);
  const MatchResult qt = max_corr(query, target);
  return detail::assemble(qp.score, qt.score, proxy_target.score, qp.mode_b,
                          proxy_target.mode_a, qt.mode_b, proxy_target.mode_b);
}

inline TransitivityFeature feature_subspace(const SubspaceModel& query,
                                            const SubspaceModel& target,
                                            const SubspaceModel& proxy) {
  TransitivityFeature f;
  f.s = feature_subspace(query, target, proxy, max_corr(proxy, target));
  f.query_id = query.set_id;
  f.target_id = target.set_id;
  f.proxy_id = proxy.set_id;
  return f;
}

// ---------------------------------------------------------------------------
// Training extraction

namespace detail {

inline void require_distinct(const std::string& a, const std::string& b) {
  if (a == b) {
    throw InvalidArgument("training extraction: reference and proxy are the "
                          "same set '" + a + "'");
  }
}

// Column of the first maximum in row `i`.
inline Eigen::Index row_argmax(const Matrix& m, Eigen::Index i) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < m.cols(); ++j) {
    if (m(i, j) > m(i, best)) best = j;
  }
  return best;
}

}  // namespace detail

/// n_r (n_r - 1) positives followed by n_p (n_p - 1) negatives, one per
/// ordered pair of distinct exemplars, row-major over the pair indices.
inline std::vector<TransitivityFeature> train_extract_exemplar(
    const FaceSet& reference, const FaceSet& proxy) {
  detail::require_same_dim(reference.dim(), proxy.dim());
  detail::require_distinct(reference.id, proxy.id);
  const Matrix r = detail::normalized_rows(reference.exemplars);
  const Matrix p = detail::normalized_rows(proxy.exemplars);
  const Matrix rr = (r * r.transpose()).cwiseAbs().cwiseMin(1.0);
  const Matrix pp = (p * p.transpose()).cwiseAbs().cwiseMin(1.0);
  const Matrix rp = (r * p.transpose()).cwiseAbs().cwiseMin(1.0);
  const Matrix pr = rp.transpose();

  // Proxy-target match: f_pt on the proxy side, f_tp on the reference side.
  const MatchResult pt = max_max_sim(p, r);
  const Vector& f_pt = pt.mode_a;
  const Vector& f_tp = pt.mode_b;
  const Vector pt_cos = (p * f_pt).cwiseAbs().cwiseMin(1.0);  // |p_k . f_pt|
  const Vector tp_cos = (r * f_tp).cwiseAbs().cwiseMin(1.0);  // |r_k . f_tp|

  const Eigen::Index nr = r.rows();
  const Eigen::Index np = p.rows();
  std::vector<TransitivityFeature> out;
  out.reserve(static_cast<std::size_t>(nr * (nr - 1) + np * (np - 1)));

  for (Eigen::Index i = 0; i < nr; ++i) {
    const Eigen::Index pq = detail::row_argmax(rp, i);
    for (Eigen::Index j = 0; j < nr; ++j) {
      if (i == j) continue;
      TransitivityFeature f;
      f.s = {rp(i, pq), rr(i, j), pt.score, pt_cos(pq), tp_cos(j)};
      f.label = 1.0;
      f.target_id = reference.id;
      f.proxy_id = proxy.id;
      f.first_index = i;
      f.second_index = j;
      out.push_back(std::move(f));
    }
  }
  for (Eigen::Index i = 0; i < np; ++i) {
    const Eigen::Index tq = detail::row_argmax(pr, i);
    for (Eigen::Index j = 0; j < np; ++j) {
      if (i == j) continue;
      TransitivityFeature f;
      f.s = {pp(i, j), pr(i, tq), pt.score, pt_cos(j), tp_cos(tq)};
      f.label = 0.0;
      f.target_id = reference.id;
      f.proxy_id = proxy.id;
      f.first_index = i;
      f.second_index = j;
      out.push_back(std::move(f));
    }
  }
  return out;
}

struct SubspaceExtraction {
  std::vector<TransitivityFeature> features;
  std::size_t degenerate_skips = 0;
};

/// One positive per reference exemplar and one negative per proxy exemplar,
/// built from projections onto the two subspaces. Exemplars whose projection
/// onto either subspace vanishes are skipped and counted.
inline SubspaceExtraction train_extract_subspace(
    const FaceSet& reference, const FaceSet& proxy,
    int k = kDefaultSubspaceRank) {
  detail::require_same_dim(reference.dim(), proxy.dim());
  detail::require_distinct(reference.id, proxy.id);
  const SubspaceModel ref_sub = fit_subspace(reference, k);
  const SubspaceModel proxy_sub = fit_subspace(proxy, k);
  const MatchResult pt = max_corr(proxy_sub, ref_sub);
  const Vector& f_pt = pt.mode_a;
  const Vector& f_tp = pt.mode_b;

  SubspaceExtraction out;
  auto emit = [&](const Matrix& source, double label) {
    for (Eigen::Index i = 0; i < source.rows(); ++i) {
      const auto f_qt = source.row(i).transpose();
      MatchResult to_target;
      MatchResult to_proxy;
      try {
        to_target = vector_subspace_sim(f_qt, ref_sub);   // mode_b = f_tq
        to_proxy = vector_subspace_sim(f_qt, proxy_sub);  // mode_b = f_pq
      } catch (const DegenerateProjection&) {
        ++out.degenerate_skips;
        continue;
      }
      TransitivityFeature f;
      f.s = detail::assemble(to_proxy.score, to_target.score, pt.score,
                             to_proxy.mode_b, f_pt, to_target.mode_b, f_tp);
      f.label = label;
      f.target_id = reference.id;
      f.proxy_id = proxy.id;
      f.first_index = i;
      out.features.push_back(std::move(f));
    }
  };
  emit(reference.exemplars, 1.0);
  emit(proxy.exemplars, 0.0);
  return out;
}

struct TrainingCorpusOptions {
  int n_train_sets = 200;
  std::size_t cap = 50000;
  std::uint64_t seed = 0;
  int subspace_rank = kDefaultSubspaceRank;
};

struct TrainingCorpus {
  std::vector<TransitivityFeature> features;
  std::size_t degenerate_skips = 0;
  std::size_t extracted = 0;  // before the cap was applied
  std::vector<std::size_t> reference_indices;
};

/// Pools training features over a seeded random choice of reference sets
/// and each of their proxies, in (reference index, proxy rank, pair index)
/// order. Above `cap` features, each label class is subsampled uniformly in
/// proportion to its share.
inline TrainingCorpus build_training_corpus(const Gallery& gallery,
                                            const ProxyTable& proxies,
                                            Baseline baseline,
                                            const TrainingCorpusOptions& opt) {
  if (gallery.empty()) throw InvalidArgument("build_training_corpus: empty gallery");
  TrainingCorpus out;
  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(gallery.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_refs =
      std::min<std::size_t>(gallery.size(), static_cast<std::size_t>(std::max(0, opt.n_train_sets)));
  order.resize(n_refs);
  std::sort(order.begin(), order.end());
  out.reference_indices = order;

  for (std::size_t ri : order) {
    const FaceSet& ref = gallery[ri];
    for (const ProxyEntry& pe : proxies.proxies_of(ref.id)) {
      auto pi = gallery.index_of(pe.id);
      if (!pi) throw DataError("proxy table names unknown set '" + pe.id + "'");
      const FaceSet& prx = gallery[*pi];
      if (baseline == Baseline::exemplar) {
        auto feats = train_extract_exemplar(ref, prx);
        std::move(feats.begin(), feats.end(), std::back_inserter(out.features));
      } else {
        auto ex = train_extract_subspace(ref, prx, opt.subspace_rank);
        out.degenerate_skips += ex.degenerate_skips;
        std::move(ex.features.begin(), ex.features.end(),
                  std::back_inserter(out.features));
      }
    }
  }
  out.extracted = out.features.size();
  if (out.features.size() <= opt.cap) return out;

  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < out.features.size(); ++i) {
    (out.features[i].label.value_or(0.0) > 0.5 ? pos : neg).push_back(i);
  }
  const double total = static_cast<double>(out.features.size());
  std::size_t keep_pos = static_cast<std::size_t>(
      std::llround(static_cast<double>(opt.cap) * static_cast<double>(pos.size()) / total));
  keep_pos = std::min(keep_pos, pos.size());
  const std::size_t keep_neg = std::min(opt.cap - keep_pos, neg.size());
  auto pick = [&](std::vector<std::size_t>& idx, std::size_t keep) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(keep);
  };
  pick(pos, keep_pos);
  pick(neg, keep_neg);
  std::vector<std::size_t> kept;
  kept.reserve(pos.size() + neg.size());
  kept.insert(kept.end(), pos.begin(), pos.end());
  kept.insert(kept.end(), neg.begin(), neg.end());
  std::sort(kept.begin(), kept.end());
  std::vector<TransitivityFeature> sub;
  sub.reserve(kept.size());
  for (std::size_t i : kept) sub.push_back(std::move(out.features[i]));
  out.features = std::move(sub);
  return out;
}

// ---------------------------------------------------------------------------
// Feature files: label \t s1 .. s5 \t ref_id \t proxy_id

inline void save_features(const std::filesystem::path& path,
                          const std::vector<TransitivityFeature>& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  for (const auto& f : features) {
    out << (f.label ? detail::format_real(*f.label) : std::string("-"));
    for (double v : f.s) out << '\t' << detail::format_real(v);
    out << '\t' << f.target_id << '\t' << f.proxy_id << '\n';
  }
}

inline std::vector<TransitivityFeature> load_features(
    const std::filesystem::path& path) {
  const std::string text = detail::read_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<TransitivityFeature> out;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    auto f = detail::split(t, '\t');
    if (f.size() != 8) throw DataError(where + ": expected 8 columns");
    TransitivityFeature feat;
    if (detail::trim(f[0]) != "-") {
      auto label = detail::parse_real(f[0]);
      if (!label || !std::isfinite(*label)) throw DataError(where + ": malformed label");
      feat.label = *label;
    }
    for (int i = 0; i < 5; ++i) {
      auto v = detail::parse_real(f[1 + i]);
      if (!v || !std::isfinite(*v)) {
        throw DataError(where + ": malformed s" + std::to_string(i + 1));
      }
      feat.s[i] = *v;
    }
    feat.target_id = std::string(detail::trim(f[6]));
    feat.proxy_id = std::string(detail::trim(f[7]));
    out.push_back(std::move(feat));
  }
  return out;
}

}  // namespace qts

#endif  // QTS_METAFEAT_HPP
