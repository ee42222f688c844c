#ifndef QTS_RETRIEVAL_HPP
#define QTS_RETRIEVAL_HPP

// Proxy selection and gallery ranking.
//
// A target's score against a query is the maximum of the baseline
// similarity and, for each of the target's k_p proxies, a quasi-transitive
// estimate: the learnt regressor's output on the (query, target | proxy)
// meta-feature clamped to [0, 1], or one of the fixed mean rules applied to
// (query-proxy, proxy-target) similarities.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qts/corpus.hpp"
#include "qts/error.hpp"
#include "qts/metafeat.hpp"
#include "qts/sampling.hpp"
#include "qts/similarity.hpp"
#include "qts/svr.hpp"

namespace qts {

enum class Method { baseline, lqts, arith, geom, quad };
enum class CombineRule { arith, geom, quad };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::baseline: return "baseline";
    case Method::lqts: return "lqts";
    case Method::arith: return "arith";
    case Method::geom: return "geom";
    case Method::quad: return "quad";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (Method m : {Method::baseline, Method::lqts, Method::arith, Method::geom,
                   Method::quad}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

inline double combine(CombineRule rule, double rho_qp, double rho_pt) {
  switch (rule) {
    case CombineRule::arith: return 0.5 * (rho_qp + rho_pt);
    case CombineRule::geom: return std::sqrt(rho_qp * rho_pt);
    case CombineRule::quad:
      return std::sqrt(0.5 * rho_qp * rho_qp + 0.5 * rho_pt * rho_pt);
  }
  return 0.0;
}

struct RetrievalConfig {
  Baseline baseline = Baseline::exemplar;
  Method method = Method::baseline;
  int k_p = 10;
  std::optional<SvrModel> model;
  int subspace_rank = kDefaultSubspaceRank;
  // External (non-gallery) exemplar queries are reduced to this many samples.
  int query_samples = kDefaultSampleCount;

  void validate(std::size_t gallery_size) const {
    if (k_p < 0) throw InvalidArgument("k_p must be nonnegative");
    if (gallery_size > 0 && static_cast<std::size_t>(k_p) > gallery_size - 1) {
      throw InvalidArgument("k_p = " + std::to_string(k_p) +
                            " exceeds gallery size - 1");
    }
    if (method == Method::lqts && !model) {
      throw InvalidArgument("method lqts requires a trained model");
    }
  }
};

struct RankedEntry {
  std::string id;
  std::size_t index = 0;
  double score = 0.0;
};

struct RankedResult {
  std::string query_id;
  std::string method;
  std::vector<RankedEntry> entries;
};

// ---------------------------------------------------------------------------
// Baseline dispatch over the two representations.

inline MatchResult baseline_match(const FaceSet& a, const FaceSet& b) {
  return max_max_sim(a, b);
}
inline MatchResult baseline_match(const SubspaceModel& a, const SubspaceModel& b) {
  return max_corr(a, b);
}

namespace detail {

// Meta-feature from the three pairwise matches, each oriented (first arg,
// second arg) as (query, proxy), (query, target), (proxy, target).
inline FeatureVector feature_from_matches(const MatchResult& qp,
                                          const MatchResult& qt,
                                          const MatchResult& pt) {
  return assemble(qp.score, qt.score, pt.score, qp.mode_b, pt.mode_a,
                  qt.mode_b, pt.mode_b);
}

inline double clamp_unit(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace detail

/// max(baseline(q, t), max_p clamp01(h(v(q, t | p)))).
template <class Rep>
double score_lqts(const Rep& query, const Rep& target, std::span<const Rep> proxies,
                  const SvrModel& model) {
  const MatchResult qt = baseline_match(query, target);
  double best = qt.score;
  for (const Rep& p : proxies) {
    const FeatureVector v = detail::feature_from_matches(
        baseline_match(query, p), qt, baseline_match(p, target));
    best = std::max(best, detail::clamp_unit(predict(model, v)));
  }
  return best;
}

/// max(baseline(q, t), max_p rule(baseline(q, p), baseline(p, t))).
template <class Rep>
double score_simple(const Rep& query, const Rep& target, std::span<const Rep> proxies,
                    CombineRule rule) {
  double best = baseline_match(query, target).score;
  for (const Rep& p : proxies) {
    const double v = combine(rule, baseline_match(query, p).score,
                             baseline_match(p, target).score);
    best = std::max(best, detail::clamp_unit(v));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Proxy selection

/// Per-set representations for one baseline, computed once per gallery.
class GalleryRepresentation {
 public:
  GalleryRepresentation(const Gallery& gallery, Baseline baseline,
                        int subspace_rank = kDefaultSubspaceRank)
      : gallery_(&gallery), baseline_(baseline), rank_(subspace_rank) {
    if (baseline == Baseline::subspace) {
      subspaces_.reserve(gallery.size());
      for (const auto& s : gallery) subspaces_.push_back(fit_subspace(s, rank_));
    }
  }

  Baseline baseline() const { return baseline_; }
  int subspace_rank() const { return rank_; }
  const Gallery& gallery() const { return *gallery_; }
  std::size_t size() const { return gallery_->size(); }

  MatchResult match(std::size_t a, std::size_t b) const {
    if (baseline_ == Baseline::exemplar) {
      return max_max_sim((*gallery_)[a], (*gallery_)[b]);
    }
    return max_corr(subspaces_[a], subspaces_[b]);
  }

  const SubspaceModel& subspace(std::size_t i) const { return subspaces_.at(i); }

 private:
  const Gallery* gallery_;
  Baseline baseline_;
  int rank_;
  std::vector<SubspaceModel> subspaces_;
};

/// The k_p most similar other sets of every gallery set, by descending
/// baseline similarity with ties broken by ascending gallery index.
inline ProxyTable select_proxies(const GalleryRepresentation& rep, int k_p) {
  const std::size_t n = rep.size();
  if (k_p < 0) throw InvalidArgument("k_p must be nonnegative");
  if (n == 0 || static_cast<std::size_t>(k_p) + 1 > n) {
    throw InvalidArgument("k_p = " + std::to_string(k_p) +
                          " too large for a gallery of " + std::to_string(n) +
                          " sets");
  }
  Matrix sim = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  if (k_p > 0) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double s = rep.match(i, j).score;
        sim(i, j) = s;
        sim(j, i) = s;
      }
    }
  }
  ProxyTable t;
  t.k_p = k_p;
  const Gallery& g = rep.gallery();
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    auto& list = t.entries[g[i].id];
    if (k_p == 0) continue;
    order.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    std::partial_sort(order.begin(), order.begin() + k_p, order.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (sim(i, a) != sim(i, b)) return sim(i, a) > sim(i, b);
                        return a < b;
                      });
    for (int r = 0; r < k_p; ++r) list.push_back({g[order[r]].id, sim(i, order[r])});
  }
  return t;
}

inline ProxyTable select_proxies(const Gallery& gallery, Baseline baseline, int k_p,
                                 int subspace_rank = kDefaultSubspaceRank) {
  return select_proxies(GalleryRepresentation(gallery, baseline, subspace_rank), k_p);
}

// ---------------------------------------------------------------------------
// Ranking

/// Scores every gallery set against a query under one configuration.
/// Query-independent work (representations, proxy-target matches) is done
/// once at construction; each query then costs one baseline match per
/// gallery set plus a meta-feature per (target, proxy).
class Retriever {
 public:
  Retriever(const Gallery& gallery, RetrievalConfig config,
            const ProxyTable* proxies = nullptr)
      : config_(std::move(config)),
        rep_(gallery, config_.baseline, config_.subspace_rank) {
    config_.validate(gallery.size());
    const std::size_t n = gallery.size();
    proxies_.resize(n);
    proxy_target_.resize(n);
    if (config_.method == Method::baseline || config_.k_p == 0) return;
    if (!proxies) throw InvalidArgument("method requires a proxy table");
    if (proxies->k_p < config_.k_p) {
      throw InvalidArgument("proxy table holds k_p = " + std::to_string(proxies->k_p) +
                            ", fewer than the requested " + std::to_string(config_.k_p));
    }
    for (std::size_t t = 0; t < n; ++t) {
      auto list = proxies->proxies_of(gallery[t].id);
      const std::size_t k = std::min<std::size_t>(list.size(), config_.k_p);
      for (std::size_t r = 0; r < k; ++r) {
        auto pi = gallery.index_of(list[r].id);
        if (!pi) throw DataError("proxy table names unknown set '" + list[r].id + "'");
        proxies_[t].push_back(*pi);
        proxy_target_[t].push_back(rep_.match(*pi, t));
      }
    }
  }

  const RetrievalConfig& config() const { return config_; }
  const Gallery& gallery() const { return rep_.gallery(); }

  /// Ranks the gallery (minus the query itself) for a gallery member.
  RankedResult rank(const std::string& query_id) const {
    auto qi = gallery().index_of(query_id);
    if (!qi) throw InvalidArgument("unknown query id '" + query_id + "'");
    return rank(*qi);
  }

  RankedResult rank(std::size_t query_index) const {
    std::vector<MatchResult> to_query(gallery().size());
    for (std::size_t j = 0; j < gallery().size(); ++j) {
      to_query[j] = rep_.match(query_index, j);
    }
    return finish(gallery()[query_index].id, to_query, query_index);
  }

  /// Ranks the whole gallery for an external query set.
  RankedResult rank(const FaceSet& query) const {
    if (query.dim() != gallery().dim()) throw DimensionMismatch(query.dim(), gallery().dim());
    std::vector<MatchResult> to_query(gallery().size());
    if (config_.baseline == Baseline::exemplar) {
      const FaceSet reduced = robust_select(query, config_.query_samples);
      for (std::size_t j = 0; j < gallery().size(); ++j) {
        to_query[j] = max_max_sim(reduced, gallery()[j]);
      }
    } else {
      const SubspaceModel q = fit_subspace(query, config_.subspace_rank);
      for (std::size_t j = 0; j < gallery().size(); ++j) {
        to_query[j] = max_corr(q, rep_.subspace(j));
      }
    }
    return finish(query.id, to_query, std::nullopt);
  }

  /// Score of target `t` given the query's baseline matches to every set.
  double score(std::span<const MatchResult> to_query, std::size_t t) const {
    const MatchResult& qt = to_query[t];
    double best = qt.score;
    if (config_.method == Method::baseline) return best;
    for (std::size_t r = 0; r < proxies_[t].size(); ++r) {
      const MatchResult& qp = to_query[proxies_[t][r]];
      const MatchResult& pt = proxy_target_[t][r];
      double v = 0.0;
      switch (config_.method) {
        case Method::lqts:
          v = predict(*config_.model, detail::feature_from_matches(qp, qt, pt));
          break;
        case Method::arith: v = combine(CombineRule::arith, qp.score, pt.score); break;
        case Method::geom: v = combine(CombineRule::geom, qp.score, pt.score); break;
        case Method::quad: v = combine(CombineRule::quad, qp.score, pt.score); break;
        case Method::baseline: break;
      }
      best = std::max(best, detail::clamp_unit(v));
    }
    return best;
  }

 private:
  RankedResult finish(const std::string& query_id,
                      const std::vector<MatchResult>& to_query,
                      std::optional<std::size_t> exclude) const {
    RankedResult out;
    out.query_id = query_id;
    out.method = to_string(config_.method);
    for (std::size_t t = 0; t < gallery().size(); ++t) {
      if (exclude && *exclude == t) continue;
      out.entries.push_back({gallery()[t].id, t, score(to_query, t)});
    }
    std::stable_sort(out.entries.begin(), out.entries.end(),
                     [](const RankedEntry& a, const RankedEntry& b) {
                       if (a.score != b.score) return a.score > b.score;
                       return a.index < b.index;
                     });
    return out;
  }

  RetrievalConfig config_;
  GalleryRepresentation rep_;
  std::vector<std::vector<std::size_t>> proxies_;
  std::vector<std::vector<MatchResult>> proxy_target_;
};

inline RankedResult rank_gallery(const std::string& query_id, const Gallery& gallery,
                                 const RetrievalConfig& config,
                                 const ProxyTable* proxies = nullptr) {
  return Retriever(gallery, config, proxies).rank(query_id);
}

inline RankedResult rank_gallery(const FaceSet& query, const Gallery& gallery,
                                 const RetrievalConfig& config,
                                 const ProxyTable* proxies = nullptr) {
  return Retriever(gallery, config, proxies).rank(query);
}

/// TSV rows `rank \t set_id \t score`, rank 1-based.
inline void save_ranking(const std::filesystem::path& path, const RankedResult& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  for (std::size_t i = 0; i < r.entries.size(); ++i) {
    out << (i + 1) << '\t' << r.entries[i].id << '\t'
        << detail::format_real(r.entries[i].score) << '\n';
  }
}

}  // namespace qts

#endif  // QTS_RETRIEVAL_HPP
