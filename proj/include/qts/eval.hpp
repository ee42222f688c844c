#ifndef QTS_EVAL_HPP
#define QTS_EVAL_HPP

// Retrieval evaluation with every labelled set used as the query in turn.
//
// The average normalized rank of the c matching sets among n candidates is
//   ANR = (sum r_i - m) / (M - m),  m = c(c+1)/2,  M = c(2n-c+1)/2
// so 0 means all matches ranked first and 1 means all ranked last.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qts/corpus.hpp"
#include "qts/detail/text.hpp"
#include "qts/error.hpp"
#include "qts/retrieval.hpp"

namespace qts {

struct AnrRecord {
  std::string query_id;
  long n = 0;
  long c = 0;
  std::vector<long> ranks;
  double anr = 0.0;
};

inline double anr(long n, std::span<const long> ranks) {
  const long c = static_cast<long>(ranks.size());
  if (c == 0) throw InvalidArgument("anr: no matching sets");
  if (c >= n) throw InvalidArgument("anr: undefined when every candidate matches");
  std::set<long> seen;
  long sum = 0;
  for (long r : ranks) {
    if (r < 1 || r > n) throw InvalidArgument("anr: rank out of [1, n]");
    if (!seen.insert(r).second) throw InvalidArgument("anr: duplicate rank");
    sum += r;
  }
  const double m = 0.5 * static_cast<double>(c) * static_cast<double>(c + 1);
  const double big_m = 0.5 * static_cast<double>(c) * static_cast<double>(2 * n - c + 1);
  return (static_cast<double>(sum) - m) / (big_m - m);
}

inline double anr(long n, std::initializer_list<long> ranks) {
  return anr(n, std::span<const long>(ranks.begin(), ranks.size()));
}

struct EvaluationRun {
  std::vector<AnrRecord> records;
  // Queries whose identity has no other set in the gallery.
  std::size_t skipped_singletons = 0;
  // Queries whose every candidate is a match (ANR undefined).
  std::size_t skipped_saturated = 0;
};

/// ANR record for one ranking; `is_match` flags gallery indices sharing the
/// query's identity.
inline AnrRecord anr_record(const RankedResult& ranking, const std::vector<bool>& is_match) {
  AnrRecord rec;
  rec.query_id = ranking.query_id;
  rec.n = static_cast<long>(ranking.entries.size());
  for (std::size_t pos = 0; pos < ranking.entries.size(); ++pos) {
    if (is_match[ranking.entries[pos].index]) rec.ranks.push_back(static_cast<long>(pos) + 1);
  }
  rec.c = static_cast<long>(rec.ranks.size());
  rec.anr = anr(rec.n, rec.ranks);
  return rec;
}

/// One record per query whose identity has at least two sets, in gallery
/// order. Labels are read here and nowhere in the retrieval path.
inline EvaluationRun evaluate_all(const LabelledGallery& lg, const Retriever& retriever) {
  if (!lg.labels) throw InvalidArgument("evaluate_all: gallery carries no identity labels");
  const Gallery& g = lg.gallery;
  const IdentityLabels& labels = *lg.labels;
  std::map<std::string, std::size_t> per_identity;
  for (const auto& s : g) ++per_identity[labels.at(s.id)];

  EvaluationRun run;
  std::vector<bool> is_match(g.size());
  for (std::size_t q = 0; q < g.size(); ++q) {
    const std::string& who = labels.at(g[q].id);
    const std::size_t count = per_identity[who];
    if (count < 2) {
      ++run.skipped_singletons;
      continue;
    }
    if (count == g.size()) {
      ++run.skipped_saturated;
      continue;
    }
    for (std::size_t j = 0; j < g.size(); ++j) {
      is_match[j] = j != q && labels.at(g[j].id) == who;
    }
    run.records.push_back(anr_record(retriever.rank(q), is_match));
  }
  return run;
}

inline EvaluationRun evaluate_all(const LabelledGallery& lg, const RetrievalConfig& config,
                                  const ProxyTable* proxies = nullptr) {
  return evaluate_all(lg, Retriever(lg.gallery, config, proxies));
}

/// Fraction of records with anr <= threshold, per threshold.
inline std::vector<std::pair<double, double>> anr_cdf(std::span<const AnrRecord> records,
                                                      std::span<const double> thresholds) {
  if (records.empty()) throw InvalidArgument("anr_cdf: no records");
  std::vector<double> values;
  values.reserve(records.size());
  for (const auto& r : records) values.push_back(r.anr);
  std::sort(values.begin(), values.end());
  std::vector<std::pair<double, double>> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto upto = std::upper_bound(values.begin(), values.end(), t) - values.begin();
    out.emplace_back(t, static_cast<double>(upto) / static_cast<double>(values.size()));
  }
  return out;
}

/// 0, 0.01, ..., 1.
inline std::vector<double> default_cdf_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 100; ++i) t.push_back(i / 100.0);
  return t;
}

struct RankKRow {
  long k = 0;             // matches per query
  std::size_t queries = 0;
  double probability = 0.0;  // P(at least one match in the top K)
  double mean_count = 0.0;   // mean number of matches in the top K
};

/// Rows grouped by the number of matches per query, ascending.
inline std::vector<RankKRow> rank_k_stats(std::span<const AnrRecord> records, long top_k = 100) {
  std::map<long, RankKRow> rows;
  for (const auto& r : records) {
    auto& row = rows[r.c];
    row.k = r.c;
    ++row.queries;
    const long hits = static_cast<long>(
        std::count_if(r.ranks.begin(), r.ranks.end(), [&](long x) { return x <= top_k; }));
    row.probability += hits > 0 ? 1.0 : 0.0;
    row.mean_count += static_cast<double>(hits);
  }
  std::vector<RankKRow> out;
  for (auto& [k, row] : rows) {
    row.probability /= static_cast<double>(row.queries);
    row.mean_count /= static_cast<double>(row.queries);
    out.push_back(row);
  }
  return out;
}

struct IndependencePrediction {
  double probability = 0.0;
  double count = 0.0;
};

/// Top-K statistics for k matches predicted from the single-match ones,
/// treating the k matches as independent: 1 - (1 - p1)^k and k * n1.
inline IndependencePrediction independence_prediction(double p1, double n1, long k) {
  if (p1 < 0.0 || p1 > 1.0) throw InvalidArgument("independence_prediction: p1 outside [0, 1]");
  if (k < 1) throw InvalidArgument("independence_prediction: k must be >= 1");
  return {1.0 - std::pow(1.0 - p1, static_cast<double>(k)), static_cast<double>(k) * n1};
}

// ---------------------------------------------------------------------------
// Reports

inline void save_anr_tsv(const std::filesystem::path& path, std::span<const AnrRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "query_id\tn\tc\tanr\n";
  for (const auto& r : records) {
    out << r.query_id << '\t' << r.n << '\t' << r.c << '\t' << detail::format_real(r.anr) << '\n';
  }
}

inline void save_cdf_csv(const std::filesystem::path& path,
                         std::span<const std::pair<double, double>> cdf) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "threshold,fraction\n";
  for (const auto& [t, f] : cdf) {
    out << detail::format_real(t) << ',' << detail::format_real(f) << '\n';
  }
}

/// Predicted columns are derived from the k = 1 row; `nan` without one.
inline void save_rank_k_csv(const std::filesystem::path& path, std::span<const RankKRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  const RankKRow* single = nullptr;
  for (const auto& r : rows) {
    if (r.k == 1) single = &r;
  }
  out << "k,empirical_prob,predicted_prob,empirical_count,predicted_count\n";
  for (const auto& r : rows) {
    std::string pp = "nan";
    std::string pc = "nan";
    if (single) {
      const auto pred = independence_prediction(single->probability, single->mean_count, r.k);
      pp = detail::format_real(pred.probability);
      pc = detail::format_real(pred.count);
    }
    out << r.k << ',' << detail::format_real(r.probability) << ',' << pp << ','
        << detail::format_real(r.mean_count) << ',' << pc << '\n';
  }
}

}  // namespace qts

#endif  // QTS_EVAL_HPP
