// qts: command-line front end for gallery synthesis, sampling, proxy
// selection, training and retrieval evaluation.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "qts/qts.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

qts::Baseline baseline_arg(const std::string& s) {
  auto b = qts::parse_baseline(s);
  if (!b) throw UsageError("unknown baseline '" + s + "' (exemplar|subspace)");
  return *b;
}

qts::Method method_arg(const std::string& s) {
  auto m = qts::parse_method(s);
  if (!m) throw UsageError("unknown method '" + s + "' (baseline|lqts|arith|geom|quad)");
  return *m;
}

qts::KernelBandwidth gamma_arg(const std::string& s) {
  if (s == "auto") return std::nullopt;
  auto v = qts::detail::parse_real(s);
  if (!v || !(*v > 0.0)) throw UsageError("--gamma must be 'auto' or a positive number");
  return *v;
}

void require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) throw UsageError(std::string(what) + " '" + p.string() + "' is not a directory");
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw UsageError(std::string(what) + " '" + p.string() + "' not found");
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

/// Writes every option of the subcommand (given or defaulted) so a run can
/// be reproduced from the log alone.
void write_run_log(const CLI::App& sub, const fs::path& where, const json& extra) {
  json log;
  log["subcommand"] = sub.get_name();
  json opts = json::object();
  for (const CLI::Option* o : sub.get_options()) {
    if (o->get_name() == "--help" || o->get_name() == "--help-all") continue;
    std::string name = o->get_name();
    while (!name.empty() && name.front() == '-') name.erase(name.begin());
    const auto& res = o->results();
    if (!res.empty()) {
      opts[name] = res.size() == 1 ? json(res.front()) : json(res);
    } else if (o->get_type_size() == 0) {
      opts[name] = false;
    } else {
      opts[name] = o->get_default_str();
    }
  }
  log["options"] = opts;
  if (!extra.is_null()) log["result"] = extra;
  std::ofstream out(where, std::ios::binary);
  if (!out) throw qts::DataError("cannot write run log '" + where.string() + "'");
  out << log.dump(2) << '\n';
}

fs::path sidecar(const fs::path& out) { return fs::path(out.string() + ".run.json"); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learnt quasi-transitive similarity for set-based retrieval"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic labelled gallery");
  std::string synth_out;
  qts::SynthConfig sc;
  std::string synth_format = "csv";
  synth->add_option("--out", synth_out, "Output gallery directory")->required();
  synth->add_option("--identities", sc.n_identities, "Number of identities")->capture_default_str();
  synth->add_option("--sets-min", sc.sets_per_identity.min, "Min sets per identity")->capture_default_str();
  synth->add_option("--sets-max", sc.sets_per_identity.max, "Max sets per identity")->capture_default_str();
  synth->add_option("--exemplars-min", sc.exemplars_per_set.min, "Min exemplars per set")->capture_default_str();
  synth->add_option("--exemplars-max", sc.exemplars_per_set.max, "Max exemplars per set")->capture_default_str();
  synth->add_option("--dim", sc.dim, "Descriptor dimension")->capture_default_str();
  synth->add_option("--tau", sc.transitivity, "Transitivity strength in [0, 1]")->capture_default_str();
  synth->add_option("--identity-spread", sc.identity_spread, "Identity anchor scale")->capture_default_str();
  synth->add_option("--condition-spread", sc.condition_spread, "Condition shift scale")->capture_default_str();
  synth->add_option("--conditions", sc.n_conditions, "Number of shared conditions")->capture_default_str();
  synth->add_option("--pose-spread", sc.pose_spread, "Pose trajectory scale")->capture_default_str();
  synth->add_option("--noise", sc.noise, "Exemplar noise level (minimum)")->capture_default_str();
  synth->add_option("--noise-max", sc.noise_max, "Maximum per-set noise level")->capture_default_str();
  synth->add_option("--floor", sc.descriptor_floor, "Descriptor offset")->capture_default_str();
  synth->add_option("--seed", sc.seed, "Random seed")->capture_default_str();
  synth->add_option("--format", synth_format, "Set file format")
      ->check(CLI::IsMember({"csv", "binary"}))->capture_default_str();

  // sample
  auto* sample = app.add_subcommand("sample", "Reduce every set to samples along its leading kernel component");
  std::string sample_gallery, sample_out, sample_gamma = "auto";
  int sample_n = qts::kDefaultSampleCount;
  sample->add_option("--gallery", sample_gallery, "Input gallery directory")->required();
  sample->add_option("--samples", sample_n, "Samples per set")->capture_default_str();
  sample->add_option("--gamma", sample_gamma, "Kernel bandwidth or 'auto'")->capture_default_str();
  sample->add_option("--out", sample_out, "Output gallery directory")->required();

  // energy
  auto* energy = app.add_subcommand("energy", "Per-set kernel PCA energy ratios");
  std::string energy_gallery, energy_out, energy_gamma = "auto";
  energy->add_option("--gallery", energy_gallery, "Gallery directory")->required();
  energy->add_option("--gamma", energy_gamma, "Kernel bandwidth or 'auto'")->capture_default_str();
  energy->add_option("--out", energy_out, "Output CSV")->required();

  // proxies
  auto* proxies = app.add_subcommand("proxies", "Select each set's most similar gallery sets");
  std::string px_gallery, px_out, px_baseline = "exemplar";
  int px_k = 10, px_rank = qts::kDefaultSubspaceRank;
  proxies->add_option("--gallery", px_gallery, "Gallery directory")->required();
  proxies->add_option("--baseline", px_baseline, "exemplar|subspace")->capture_default_str();
  proxies->add_option("--k", px_k, "Proxies per set")->capture_default_str();
  proxies->add_option("--rank", px_rank, "Subspace rank")->capture_default_str();
  proxies->add_option("--out", px_out, "Output TSV")->required();

  // extract
  auto* extract = app.add_subcommand("extract", "Extract training meta-features");
  std::string ex_gallery, ex_proxies, ex_out, ex_baseline = "exemplar";
  qts::TrainingCorpusOptions ex_opt;
  extract->add_option("--gallery", ex_gallery, "Gallery directory")->required();
  extract->add_option("--proxies", ex_proxies, "Proxy table TSV")->required();
  extract->add_option("--baseline", ex_baseline, "exemplar|subspace")->capture_default_str();
  extract->add_option("--train-sets", ex_opt.n_train_sets, "Reference sets drawn")->capture_default_str();
  extract->add_option("--cap", ex_opt.cap, "Maximum number of features")->capture_default_str();
  extract->add_option("--seed", ex_opt.seed, "Random seed")->capture_default_str();
  extract->add_option("--rank", ex_opt.subspace_rank, "Subspace rank")->capture_default_str();
  extract->add_option("--out", ex_out, "Output feature TSV")->required();

  // train
  auto* train = app.add_subcommand("train", "Train the epsilon-SV regressor");
  std::string tr_features, tr_out;
  qts::SvrConfig tr_cfg;
  train->add_option("--features", tr_features, "Feature TSV")->required();
  train->add_option("--epsilon", tr_cfg.epsilon, "Insensitive-zone width")->capture_default_str();
  train->add_option("--cost", tr_cfg.cost, "Error penalty C")->capture_default_str();
  train->add_option("--gamma", tr_cfg.kernel_gamma, "RBF kernel gamma")->capture_default_str();
  train->add_option("--tolerance", tr_cfg.kkt_tolerance, "KKT stopping tolerance")->capture_default_str();
  train->add_option("--max-iter", tr_cfg.max_passes, "Iteration limit")->capture_default_str();
  train->add_option("--cache-mb", tr_cfg.cache_mb, "Kernel cache size (MiB)")->capture_default_str();
  train->add_option("--out", tr_out, "Output model file")->required();

  // retrieve / evaluate share their retrieval options.
  struct RetrievalArgs {
    std::string gallery, method = "baseline", baseline = "exemplar", model, proxies;
    int k = 10;
    int rank = qts::kDefaultSubspaceRank;
  };
  auto add_retrieval = [](CLI::App* sub, RetrievalArgs& a) {
    sub->add_option("--gallery", a.gallery, "Gallery directory")->required();
    sub->add_option("--method", a.method, "baseline|lqts|arith|geom|quad")->capture_default_str();
    sub->add_option("--baseline", a.baseline, "exemplar|subspace")->capture_default_str();
    sub->add_option("--model", a.model, "Trained model (required for lqts)");
    sub->add_option("--proxies", a.proxies, "Proxy table TSV (computed when omitted)");
    sub->add_option("--k", a.k, "Proxies per target")->capture_default_str();
    sub->add_option("--rank", a.rank, "Subspace rank")->capture_default_str();
  };

  auto* retrieve = app.add_subcommand("retrieve", "Rank the gallery against one query");
  RetrievalArgs rv;
  std::string rv_query, rv_query_set, rv_out;
  add_retrieval(retrieve, rv);
  auto* q_id = retrieve->add_option("--query", rv_query, "Query set id within the gallery");
  retrieve->add_option("--query-set", rv_query_set, "External query set file (CSV or binary)")
      ->excludes(q_id);
  retrieve->add_option("--out", rv_out, "Output ranking TSV")->required();

  auto* evaluate = app.add_subcommand("evaluate", "ANR evaluation over all admissible queries");
  RetrievalArgs ev;
  std::string ev_out;
  long ev_top = 100;
  add_retrieval(evaluate, ev);
  evaluate->add_option("--top", ev_top, "K for the top-K statistics")->capture_default_str();
  evaluate->add_option("--out-dir", ev_out, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  // Loads the gallery, proxy table and model a retrieval run needs.
  struct Prepared {
    qts::LabelledGallery lg;
    qts::RetrievalConfig cfg;
    std::optional<qts::ProxyTable> table;
  };
  auto prepare = [](const RetrievalArgs& a) {
    const qts::Method method = method_arg(a.method);
    const qts::Baseline baseline = baseline_arg(a.baseline);
    if (a.k < 0) throw UsageError("--k must be nonnegative");
    if (method == qts::Method::lqts && a.model.empty()) {
      throw UsageError("method lqts requires --model");
    }
    require_dir(a.gallery, "gallery");
    if (!a.model.empty()) require_file(a.model, "model");
    if (!a.proxies.empty()) require_file(a.proxies, "proxy table");
    Prepared p;
    p.lg = qts::load_gallery(a.gallery);
    p.cfg.baseline = baseline;
    p.cfg.method = method;
    p.cfg.k_p = a.k;
    p.cfg.subspace_rank = a.rank;
    if (!a.model.empty()) p.cfg.model = qts::load_model(a.model);
    if (method != qts::Method::baseline && a.k > 0) {
      p.table = a.proxies.empty()
                    ? qts::select_proxies(p.lg.gallery, baseline, a.k, a.rank)
                    : qts::load_proxy_table(a.proxies);
    }
    p.cfg.validate(p.lg.gallery.size());
    return p;
  };

  try {
    if (*synth) {
      const auto sg = qts::generate(sc);
      qts::save_synth(synth_out, sg,
                      synth_format == "binary" ? qts::SetFormat::binary : qts::SetFormat::csv);
      write_run_log(*synth, fs::path(synth_out) / "run.json",
                    {{"sets", sg.gallery.gallery.size()}});
    } else if (*sample) {
      require_dir(sample_gallery, "gallery");
      const auto gamma = gamma_arg(sample_gamma);
      if (sample_n < 2) throw UsageError("--samples must be >= 2");
      auto lg = qts::load_gallery(sample_gallery);
      std::vector<qts::FaceSet> reduced;
      for (const auto& s : lg.gallery) reduced.push_back(qts::robust_select(s, sample_n, gamma));
      qts::LabelledGallery out{qts::Gallery(std::move(reduced)), lg.labels};
      qts::save_gallery(sample_out, out);
      write_run_log(*sample, fs::path(sample_out) / "run.json", {{"sets", out.gallery.size()}});
    } else if (*energy) {
      require_dir(energy_gallery, "gallery");
      const auto gamma = gamma_arg(energy_gamma);
      const auto lg = qts::load_gallery(energy_gallery);
      ensure_parent(energy_out);
      std::ofstream out(energy_out, std::ios::binary);
      if (!out) throw qts::DataError("cannot write '" + energy_out + "'");
      out << "set_id,ratio2,ratio3\n";
      std::size_t skipped = 0;
      for (const auto& s : lg.gallery) {
        if (s.size() < 2) {
          ++skipped;
          continue;
        }
        const auto [r2, r3] = qts::energy_report(s, gamma);
        out << s.id << ',' << qts::detail::format_real(r2) << ','
            << qts::detail::format_real(r3) << '\n';
      }
      write_run_log(*energy, sidecar(energy_out), {{"skipped_small_sets", skipped}});
    } else if (*proxies) {
      require_dir(px_gallery, "gallery");
      const auto b = baseline_arg(px_baseline);
      if (px_k < 0) throw UsageError("--k must be nonnegative");
      const auto lg = qts::load_gallery(px_gallery);
      const auto t = qts::select_proxies(lg.gallery, b, px_k, px_rank);
      ensure_parent(px_out);
      qts::save_proxy_table(px_out, t, &lg.gallery);
      write_run_log(*proxies, sidecar(px_out), nullptr);
    } else if (*extract) {
      require_dir(ex_gallery, "gallery");
      require_file(ex_proxies, "proxy table");
      const auto b = baseline_arg(ex_baseline);
      const auto lg = qts::load_gallery(ex_gallery);
      const auto t = qts::load_proxy_table(ex_proxies);
      const auto corpus = qts::build_training_corpus(lg.gallery, t, b, ex_opt);
      ensure_parent(ex_out);
      qts::save_features(ex_out, corpus.features);
      std::size_t pos = 0;
      for (const auto& f : corpus.features) pos += f.label.value_or(0.0) > 0.5;
      std::cerr << "extracted " << corpus.extracted << " features, kept "
                << corpus.features.size() << " (" << pos << " positive), "
                << corpus.degenerate_skips << " degenerate projections skipped\n";
      write_run_log(*extract, sidecar(ex_out),
                    {{"extracted", corpus.extracted},
                     {"kept", corpus.features.size()},
                     {"positives", pos},
                     {"degenerate_skips", corpus.degenerate_skips}});
    } else if (*train) {
      require_file(tr_features, "feature file");
      const auto feats = qts::load_features(tr_features);
      std::vector<qts::SvrInput> x;
      std::vector<double> y;
      for (const auto& f : feats) {
        if (!f.label) throw qts::DataError(tr_features + ": unlabelled feature in training file");
        x.push_back(f.s);
        y.push_back(*f.label);
      }
      try {
        tr_cfg.validate();
      } catch (const qts::InvalidArgument& e) {
        throw UsageError(e.what());
      }
      if (x.empty()) throw qts::DataError(tr_features + ": no training features");
      qts::SvrTrainReport rep;
      const auto model = qts::train_svr(x, y, tr_cfg, &rep);
      ensure_parent(tr_out);
      qts::save_model(tr_out, model);
      std::cerr << "trained on " << x.size() << " features: " << model.support.size()
                << " support vectors, " << rep.iterations << " iterations"
                << (rep.converged ? "" : " (iteration limit reached)") << '\n';
      write_run_log(*train, sidecar(tr_out),
                    {{"samples", x.size()},
                     {"support_vectors", model.support.size()},
                     {"iterations", rep.iterations},
                     {"converged", rep.converged},
                     {"max_kkt_violation", rep.max_kkt_violation},
                     {"objective", rep.objective},
                     {"objective_trace", rep.objective_trace}});
    } else if (*retrieve) {
      if (rv_query.empty() && rv_query_set.empty()) {
        throw UsageError("retrieve needs --query or --query-set");
      }
      auto p = prepare(rv);
      const qts::ProxyTable* table = p.table ? &*p.table : nullptr;
      qts::RankedResult r;
      if (!rv_query.empty()) {
        if (!p.lg.gallery.index_of(rv_query)) {
          throw UsageError("query '" + rv_query + "' is not in the gallery");
        }
        r = qts::rank_gallery(rv_query, p.lg.gallery, p.cfg, table);
      } else {
        require_file(rv_query_set, "query set");
        qts::FaceSet q;
        q.id = fs::path(rv_query_set).stem().string();
        q.source_path = rv_query_set;
        q.exemplars = qts::read_set_file(rv_query_set);
        qts::validate_face_set(q);
        r = qts::rank_gallery(q, p.lg.gallery, p.cfg, table);
      }
      ensure_parent(rv_out);
      qts::save_ranking(rv_out, r);
      write_run_log(*retrieve, sidecar(rv_out), {{"entries", r.entries.size()}});
    } else if (*evaluate) {
      if (ev_top < 1) throw UsageError("--top must be positive");
      auto p = prepare(ev);
      if (!p.lg.labels) throw qts::DataError(ev.gallery + ": manifest carries no identity labels");
      const qts::ProxyTable* table = p.table ? &*p.table : nullptr;
      const auto run = qts::evaluate_all(p.lg, p.cfg, table);
      fs::create_directories(ev_out);
      const fs::path dir(ev_out);
      qts::save_anr_tsv(dir / "anr.tsv", run.records);
      json extra{{"queries", run.records.size()},
                 {"skipped_singletons", run.skipped_singletons},
                 {"skipped_saturated", run.skipped_saturated}};
      if (!run.records.empty()) {
        const auto th = qts::default_cdf_thresholds();
        const auto cdf = qts::anr_cdf(run.records, th);
        qts::save_cdf_csv(dir / "cdf.csv", cdf);
        qts::save_rank_k_csv(dir / ("rank" + std::to_string(ev_top) + ".csv"),
                             qts::rank_k_stats(run.records, ev_top));
        std::size_t below = 0;
        for (const auto& r : run.records) below += r.anr < 0.3;
        extra["fraction_anr_below_0.3"] =
            static_cast<double>(below) / static_cast<double>(run.records.size());
      } else {
        std::cerr << "warning: no admissible queries (every identity has a single set)\n";
      }
      write_run_log(*evaluate, dir / "run.json", extra);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  } catch (const qts::InvalidArgument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
