// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "qts/qts.hpp"

using namespace qts;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failures while a criterion runs; the first few are reported.
struct Checker {
  bool ok = true;
  std::vector<std::string> notes;
  void expect(bool cond, const std::string& what) {
    if (cond) return;
    ok = false;
    if (notes.size() < 3) notes.push_back(what);
  }
  Outcome outcome(std::string summary) const {
    if (!ok) {
      for (const auto& n : notes) summary += "; " + n;
    }
    return {ok, summary};
  }
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

Matrix random_matrix(std::mt19937_64& rng, long n, long d, double lo = -1.0) {
  std::uniform_real_distribution<double> u(lo, 1.0);
  Matrix m(n, d);
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < d; ++j) m(i, j) = u(rng);
    if (m.row(i).norm() == 0.0) m(i, 0) = 1.0;
  }
  return m;
}

FaceSet set_of(const std::string& id, Matrix x) {
  FaceSet s;
  s.id = id;
  s.exemplars = std::move(x);
  s.source_path = id + ".csv";
  return s;
}

// ---------------------------------------------------------------------------

Outcome anr_oracle() {
  Checker c;
  long cases = 0;
  for (long n = 2; n <= 7; ++n) {
    for (long k = 1; k < n; ++k) {
      // Every k-subset of {1..n} via bitmask.
      for (unsigned mask = 0; mask < (1u << n); ++mask) {
        if (std::popcount(mask) != k) continue;
        std::vector<long> r;
        for (long i = 0; i < n; ++i)
          if (mask & (1u << i)) r.push_back(i + 1);
        const double got = anr(n, std::span<const long>(r));
        c.expect(std::abs(got - oracle::anr(n, r)) <= 1e-15,
                 "n=" + std::to_string(n) + " mismatch");
        ++cases;
      }
      std::vector<long> best(k), worst(k);
      std::iota(best.begin(), best.end(), 1);
      std::iota(worst.begin(), worst.end(), n - k + 1);
      c.expect(anr(n, std::span<const long>(best)) == 0.0, "best placement not 0");
      c.expect(anr(n, std::span<const long>(worst)) == 1.0, "worst placement not 1");
    }
  }
  return c.outcome(std::to_string(cases) + " rank placements");
}

Outcome similarity_oracles() {
  Checker c;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<long> rows(1, 20), dims(2, 24);
  double worst = 0.0;
  for (int t = 0; t < 500; ++t) {
    const long d = dims(rng);
    const Matrix a = random_matrix(rng, rows(rng), d);
    const Matrix b = random_matrix(rng, rows(rng), d);
    const double err = std::abs(max_max_sim(a, b).score - oracle::max_max(a, b));
    worst = std::max(worst, err);
  }
  c.expect(worst <= 1e-9, "max_max error " + fmt(worst));

  std::uniform_int_distribution<int> sd(2, 8), rk(1, 3);
  double worst_corr = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int d = sd(rng);
    const int ka = std::min(rk(rng), d - 1 > 0 ? d - 1 : 1);
    const int kb = std::min(rk(rng), d - 1 > 0 ? d - 1 : 1);
    SubspaceModel a, b;
    a.basis = oracle::gram_schmidt(random_matrix(rng, d, ka));
    b.basis = oracle::gram_schmidt(random_matrix(rng, d, kb));
    const double grid = oracle::grid_max_corr(a.basis, b.basis, 400);
    worst_corr = std::max(worst_corr, std::abs(max_corr(a, b).score - grid));
  }
  c.expect(worst_corr <= 1e-3, "max_corr error " + fmt(worst_corr));
  return c.outcome("max_max worst " + fmt(worst, 3) + " over 500 pairs, max_corr worst " +
                   fmt(worst_corr, 3) + " over 100 pairs");
}

// Checks one trained model against its training corpus.
void check_svr_model(Checker& c, const SvrModel& m, const std::vector<SvrInput>& x,
                     const std::vector<double>& y, long& free_checked) {
  double sum = 0.0;
  for (const auto& sv : m.support) {
    sum += sv.beta;
    c.expect(std::abs(sv.beta) <= m.config.cost, "|beta| > C");
  }
  c.expect(std::abs(sum) <= 1e-6, "sum beta = " + fmt(sum));
  for (const auto& sv : m.support) {
    if (std::abs(sv.beta) >= m.config.cost) continue;
    // Inputs are continuous draws, so the match is unique.
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (sv.x != x[i]) continue;
      ++free_checked;
      const double r = std::abs(predict(m, x[i]) - y[i]);
      c.expect(r <= m.config.epsilon + 1e-3, "non-bound residual " + fmt(r));
    }
  }
}

Outcome svr_contract() {
  Checker c;
  std::mt19937_64 rng(77);
  auto inputs = [&](int n, double scale) {
    std::uniform_real_distribution<double> u(0.0, scale);
    std::vector<SvrInput> x(n);
    for (auto& v : x)
      for (double& e : v) e = u(rng);
    return x;
  };
  long models = 0, free_checked = 0;
  double worst_rel = 0.0;

  // Brute-force comparisons on tiny corpora.
  std::uniform_int_distribution<int> nsz(2, 6);
  std::bernoulli_distribution coin(0.5);
  for (int t = 0; t < 40; ++t) {
    oracle::DualProblem p;
    const int n = nsz(rng);
    const auto x = inputs(n, 3.0);
    for (const auto& v : x) p.x.push_back(v);
    for (int i = 0; i < n; ++i) p.y.push_back(coin(rng) ? 1.0 : 0.0);
    if (t % 3 == 1) p.cost = 0.5;
    if (t % 3 == 2) p.epsilon = 0.05;
    SvrConfig cfg;
    cfg.epsilon = p.epsilon;
    cfg.cost = p.cost;
    cfg.kernel_gamma = p.gamma;
    const auto m = train_svr(x, p.y, cfg);
    ++models;
    check_svr_model(c, m, x, p.y, free_checked);
    const double exact = oracle::enumerate_dual_minimum(p);
    std::vector<double> beta(x.size(), 0.0);
    for (const auto& sv : m.support)
      for (std::size_t i = 0; i < x.size(); ++i)
        if (sv.x == x[i]) beta[i] += sv.beta;
    const double got = dual_objective(x, p.y, beta, cfg);
    const double rel = std::abs(got - exact) / std::max(std::abs(exact), 1e-12);
    if (std::abs(got - exact) > 1e-12) worst_rel = std::max(worst_rel, rel);
    c.expect(std::abs(got - exact) <= 1e-2 * std::abs(exact) + 1e-12,
             "objective " + fmt(got, 8) + " vs " + fmt(exact, 8));
  }

  // Larger corpora: contract only.
  for (int n : {100, 400, 1000}) {
    const auto x = inputs(n, 1.0);
    std::vector<double> y(n);
    for (int i = 0; i < n; ++i) y[i] = x[i][0] + 0.5 * x[i][3] > 0.75 ? 1.0 : 0.0;
    SvrTrainReport rep;
    const auto m = train_svr(x, y, SvrConfig{}, &rep);
    ++models;
    c.expect(rep.converged, "solver hit the iteration limit at n=" + std::to_string(n));
    check_svr_model(c, m, x, y, free_checked);
  }
  return c.outcome(std::to_string(models) + " models, " + std::to_string(free_checked) +
                   " non-bound points checked, worst objective rel. error " +
                   fmt(worst_rel, 3));
}

Outcome extraction_counts() {
  Checker c;
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<long> sz(1, 12), dims(3, 16);
  std::size_t skips_total = 0;
  for (int t = 0; t < 50; ++t) {
    const long d = dims(rng);
    const auto r = set_of("r", random_matrix(rng, sz(rng), d, 0.0));
    const auto p = set_of("p", random_matrix(rng, sz(rng), d, 0.0));
    const long nr = r.size(), np = p.size();

    const auto ex = train_extract_exemplar(r, p);
    const long pos = std::count_if(ex.begin(), ex.end(), [](const auto& f) { return *f.label == 1.0; });
    c.expect(pos == nr * (nr - 1), "exemplar positives " + std::to_string(pos));
    c.expect(static_cast<long>(ex.size()) - pos == np * (np - 1),
             "exemplar negatives " + std::to_string(ex.size() - pos));

    const auto sub = train_extract_subspace(r, p, 6);
    const long spos = std::count_if(sub.features.begin(), sub.features.end(),
                                    [](const auto& f) { return *f.label == 1.0; });
    const long sneg = static_cast<long>(sub.features.size()) - spos;
    skips_total += sub.degenerate_skips;
    c.expect(spos + sneg + static_cast<long>(sub.degenerate_skips) == nr + np,
             "subspace count " + std::to_string(sub.features.size()));
    c.expect(spos <= nr && sneg <= np, "subspace split");
  }
  return c.outcome("50 pairs, " + std::to_string(skips_total) + " degenerate subspace skips");
}

Outcome robust_selection() {
  Checker c;
  SynthConfig cfg;
  cfg.n_identities = 60;
  cfg.dim = 32;
  cfg.exemplars_per_set = {60, 200};
  cfg.seed = 5;
  const auto sg = generate(cfg);
  const Gallery& g = sg.gallery.gallery;

  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> pick(0, g.size() - 1);
  std::map<std::size_t, FaceSet> reduced;
  auto red = [&](std::size_t i) -> const FaceSet& {
    auto it = reduced.find(i);
    if (it == reduced.end()) it = reduced.emplace(i, robust_select(g[i], 10)).first;
    return it->second;
  };
  std::vector<double> delta;
  double min_shrink = 1e300;
  while (delta.size() < 200) {
    const auto i = pick(rng), j = pick(rng);
    if (i == j) continue;
    const double full = max_max_sim(g[i], g[j]).score;
    const double small = max_max_sim(red(i), red(j)).score;
    delta.push_back(std::abs(full - small));
    const double shrink = static_cast<double>(g[i].size() * g[j].size()) /
                          static_cast<double>(red(i).size() * red(j).size());
    min_shrink = std::min(min_shrink, shrink);
  }
  std::nth_element(delta.begin(), delta.begin() + 100, delta.end());
  const double hi = delta[100];
  const double lo = *std::max_element(delta.begin(), delta.begin() + 100);
  const double median = 0.5 * (lo + hi);
  c.expect(median < 0.05, "median |delta| " + fmt(median));
  c.expect(min_shrink >= 36.0, "comparison shrink " + fmt(min_shrink));
  return c.outcome("median |delta max_max| " + fmt(median, 3) + ", min comparison shrink " +
                   fmt(min_shrink, 4) + "x");
}

// Directional reproduction on a gallery with transitive identity structure.
SynthConfig transitive_gallery() {
  SynthConfig cfg;
  cfg.n_identities = 60;
  cfg.sets_per_identity = {2, 4};
  cfg.transitivity = 0.7;
  cfg.dim = 32;
  // Tight sets under strong shared condition shifts.
  cfg.pose_spread = 0.1;
  cfg.noise = 0.02;
  cfg.condition_spread = 2.0;
  cfg.descriptor_floor = 0.3;
  cfg.seed = 1;
  return cfg;
}

double fraction_below(const std::vector<AnrRecord>& r, double t) {
  const auto n = std::count_if(r.begin(), r.end(), [t](const auto& x) { return x.anr < t; });
  return static_cast<double>(n) / static_cast<double>(r.size());
}

std::string directional(Checker& c, const LabelledGallery& lg, Baseline b, int k_p) {
  const auto table = select_proxies(lg.gallery, b, k_p);
  TrainingCorpusOptions opt;
  opt.cap = 10000;
  opt.seed = 7;
  const auto corpus = build_training_corpus(lg.gallery, table, b, opt);
  std::vector<SvrInput> x;
  std::vector<double> y;
  for (const auto& f : corpus.features) {
    x.push_back(f.s);
    y.push_back(*f.label);
  }
  const auto model = train_svr(x, y, SvrConfig{});

  RetrievalConfig base;
  base.baseline = b;
  base.method = Method::baseline;
  base.k_p = k_p;
  RetrievalConfig lq = base;
  lq.method = Method::lqts;
  lq.model = model;
  const auto rb = evaluate_all(lg, base, &table).records;
  const auto rl = evaluate_all(lg, lq, &table).records;

  const std::string name = to_string(b);
  const double fb = fraction_below(rb, 0.3), fl = fraction_below(rl, 0.3);
  c.expect(fl - fb >= 0.05, name + " gain " + fmt(100 * (fl - fb), 3) + "pp < 5pp");
  const std::vector<double> th{0.1, 0.2, 0.3, 0.4, 0.5};
  const auto cb = anr_cdf(rb, th), cl = anr_cdf(rl, th);
  std::string cdf;
  for (std::size_t i = 0; i < th.size(); ++i) {
    c.expect(cl[i].second >= cb[i].second,
             name + " CDF below baseline at " + fmt(th[i], 2));
    cdf += (i ? " " : "") + fmt(cb[i].second, 3) + "/" + fmt(cl[i].second, 3);
  }
  return name + " k_p=" + std::to_string(k_p) + ": ANR<0.3 " + fmt(fb, 3) + " -> " +
         fmt(fl, 3) + " over " + std::to_string(rb.size()) + " queries, CDF base/lqts " + cdf;
}

Outcome end_to_end() {
  Checker c;
  const auto sg = generate(transitive_gallery());
  std::vector<FaceSet> reduced;
  for (const auto& s : sg.gallery.gallery) reduced.push_back(robust_select(s, 10));
  const LabelledGallery exemplar{Gallery(std::move(reduced)), sg.gallery.labels};
  std::string detail = directional(c, exemplar, Baseline::exemplar, 5);
  detail += " | " + directional(c, sg.gallery, Baseline::subspace, 1);
  return c.outcome(detail);
}

Outcome combiner_sanity() {
  Checker c;
  SynthConfig cfg;
  cfg.n_identities = 10;
  cfg.sets_per_identity = {2, 3};
  cfg.exemplars_per_set = {8, 14};
  cfg.dim = 12;
  cfg.seed = 9;
  const auto sg = generate(cfg);
  const Gallery& g = sg.gallery.gallery;
  long rankings = 0;
  for (Baseline b : {Baseline::exemplar, Baseline::subspace}) {
    const auto table = select_proxies(g, b, 2);
    TrainingCorpusOptions opt;
    opt.cap = 500;
    std::vector<SvrInput> x;
    std::vector<double> y;
    for (const auto& f : build_training_corpus(g, table, b, opt).features) {
      x.push_back(f.s);
      y.push_back(*f.label);
    }
    const auto model = train_svr(x, y, SvrConfig{});
    RetrievalConfig base;
    base.baseline = b;
    base.k_p = 0;
    for (const auto& q : g) {
      const auto ref = rank_gallery(q.id, g, base);
      for (Method m : {Method::lqts, Method::arith, Method::geom, Method::quad}) {
        RetrievalConfig rc = base;
        rc.method = m;
        rc.model = model;
        const auto got = rank_gallery(q.id, g, rc);
        bool same = got.entries.size() == ref.entries.size();
        for (std::size_t i = 0; same && i < ref.entries.size(); ++i) {
          same = got.entries[i].id == ref.entries[i].id &&
                 got.entries[i].score == ref.entries[i].score;
        }
        c.expect(same, std::string(to_string(m)) + " differs from baseline at k_p=0");
        ++rankings;
      }
    }
  }
  c.expect(std::abs(combine(CombineRule::arith, 0.6, 0.8) - 0.7) <= 1e-12, "arith hand case");
  c.expect(std::abs(combine(CombineRule::geom, 0.25, 1.0) - 0.5) <= 1e-12, "geom hand case");
  c.expect(std::abs(combine(CombineRule::quad, 0.6, 0.8) - 0.707107) <= 1e-6, "quad hand case");
  return c.outcome(std::to_string(rankings) + " rankings identical to baseline, combiners " +
                   fmt(combine(CombineRule::arith, 0.6, 0.8), 7) + " / " +
                   fmt(combine(CombineRule::geom, 0.25, 1.0), 7) + " / " +
                   fmt(combine(CombineRule::quad, 0.6, 0.8), 7));
}

Outcome rank_k_predictions() {
  Checker c;
  c.expect(std::abs(independence_prediction(0.5, 0.3, 2).probability - 0.75) <= 1e-9, "0.75");
  c.expect(std::abs(independence_prediction(0.2, 0.3, 3).probability - 0.488) <= 1e-9, "0.488");
  const auto id = independence_prediction(0.37, 0.41, 1);
  c.expect(std::abs(id.probability - 0.37) <= 1e-9 && std::abs(id.count - 0.41) <= 1e-9,
           "identity at k=1");

  std::mt19937_64 rng(30);
  std::uniform_int_distribution<long> cnt(1, 4);
  std::vector<AnrRecord> recs;
  for (int q = 0; q < 30; ++q) {
    std::vector<long> ranks(300);
    std::iota(ranks.begin(), ranks.end(), 1);
    std::shuffle(ranks.begin(), ranks.end(), rng);
    ranks.resize(cnt(rng));
    std::sort(ranks.begin(), ranks.end());
    AnrRecord r;
    r.n = 300;
    r.c = static_cast<long>(ranks.size());
    r.ranks = ranks;
    r.anr = anr(r.n, r.ranks);
    recs.push_back(r);
  }
  const auto rows = rank_k_stats(recs, 100);
  std::map<long, std::array<long, 3>> recount;  // queries, hits, total
  for (const auto& r : recs) {
    auto& e = recount[r.c];
    const long n = std::count_if(r.ranks.begin(), r.ranks.end(), [](long x) { return x <= 100; });
    ++e[0];
    e[1] += n > 0;
    e[2] += n;
  }
  for (const auto& row : rows) {
    const auto it = recount.find(row.k);
    const std::array<long, 3> e = it == recount.end() ? std::array<long, 3>{0, 0, 0} : it->second;
    c.expect(static_cast<long>(row.queries) == e[0], "query count at k=" + std::to_string(row.k));
    if (e[0] == 0) continue;
    c.expect(row.probability == static_cast<double>(e[1]) / e[0], "probability");
    c.expect(row.mean_count == static_cast<double>(e[2]) / e[0], "mean count");
  }
  for (const auto& [k, e] : recount) {
    const bool present = std::any_of(rows.begin(), rows.end(), [k](const auto& r) { return r.k == k; });
    c.expect(present, "missing row k=" + std::to_string(k));
  }
  return c.outcome("hand values and recount over 30 queries agree");
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {1, 1.0, anr_oracle},         {2, 30.0, similarity_oracles},
      {3, 60.0, svr_contract},      {4, 0.0, extraction_counts},
      {5, 120.0, robust_selection}, {6, 600.0, end_to_end},
      {7, 0.0, combiner_sanity},    {8, 0.0, rank_k_predictions},
  };
  int failed = 0;
  for (const auto& cr : all) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cr.limit_s > 0.0 && secs >= cr.limit_s) {
      o.pass = false;
      o.detail += "; runtime over " + fmt(cr.limit_s) + " s";
    }
    failed += !o.pass;
    std::printf("%s criterion %d (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", cr.id, secs,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
