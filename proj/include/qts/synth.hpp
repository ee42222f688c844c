#ifndef QTS_SYNTH_HPP
#define QTS_SYNTH_HPP

// Seeded generator of identity-structured synthetic galleries.
//
// Identity anchors sit on a smooth closed curve through a few random control
// directions; `transitivity` blends each anchor between its chain position
// (neighbours look alike) and an independent random direction. A set is its
// identity anchor, shifted along one of a few condition directions shared by
// all identities, with exemplars spread along a 1-D pose trajectory (also
// shared) over a random sub-range, plus isotropic noise whose level may vary
// from set to set. Descriptors are offset by `descriptor_floor` and clipped
// at zero so all cosines are nonnegative.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "qts/corpus.hpp"
#include "qts/error.hpp"

namespace qts {

struct IntRange {
  int min = 1;
  int max = 1;
};

struct SynthConfig {
  int n_identities = 60;
  IntRange sets_per_identity{2, 4};
  IntRange exemplars_per_set{20, 60};
  int dim = 32;
  double identity_spread = 1.0;
  double condition_spread = 0.6;
  double transitivity = 0.7;
  double descriptor_floor = 0.5;
  int n_conditions = 4;
  int chain_controls = 6;
  double pose_spread = 0.8;
  // Fraction of the full pose range covered by one set, drawn per set.
  double pose_coverage_min = 0.3;
  double pose_coverage_max = 1.0;
  // Per-set isotropic noise level, drawn uniformly from [noise, noise_max]
  // (a negative noise_max means a constant level).
  double noise = 0.05;
  double noise_max = -1.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_identities < 1) throw InvalidArgument("synth: n_identities must be positive");
    if (sets_per_identity.min < 1 || sets_per_identity.max < sets_per_identity.min) {
      throw InvalidArgument("synth: invalid sets-per-identity range");
    }
    if (exemplars_per_set.min < 1 || exemplars_per_set.max < exemplars_per_set.min) {
      throw InvalidArgument("synth: invalid exemplars-per-set range");
    }
    if (dim < 2) throw InvalidArgument("synth: dim must be >= 2");
    if (transitivity < 0.0 || transitivity > 1.0) {
      throw InvalidArgument("synth: transitivity must lie in [0, 1]");
    }
    if (identity_spread <= 0.0 || condition_spread < 0.0 || descriptor_floor < 0.0 ||
        pose_spread < 0.0 || noise < 0.0) {
      throw InvalidArgument("synth: spreads must be nonnegative (identity spread positive)");
    }
    if (noise_max >= 0.0 && noise_max < noise) {
      throw InvalidArgument("synth: noise_max must be negative or >= noise");
    }
    if (n_conditions < 1 || chain_controls < 2) {
      throw InvalidArgument("synth: need >= 1 condition and >= 2 chain controls");
    }
    if (!(pose_coverage_min > 0.0) || pose_coverage_max < pose_coverage_min ||
        pose_coverage_max > 1.0) {
      throw InvalidArgument("synth: invalid pose coverage range");
    }
  }
};

struct SynthTruth {
  std::string set_id;
  std::string identity;
  int condition = 0;
  double pose_lo = 0.0;
  double pose_hi = 0.0;
};

struct SynthGallery {
  LabelledGallery gallery;
  std::vector<SynthTruth> truth;
};

namespace detail {

inline Vector random_unit(std::mt19937_64& rng, Eigen::Index d) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = n01(rng);
  return v.normalized();
}

}  // namespace detail

inline SynthGallery generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Eigen::Index d = cfg.dim;

  std::vector<Vector> controls;
  for (int i = 0; i < cfg.chain_controls; ++i) controls.push_back(detail::random_unit(rng, d));
  std::vector<Vector> conditions;
  for (int i = 0; i < cfg.n_conditions; ++i) conditions.push_back(detail::random_unit(rng, d));
  // Pose trajectory: t * pose_a + (t^2 - 1/3) * pose_b, t in [-1, 1].
  const Vector pose_a = detail::random_unit(rng, d);
  const Vector pose_b = detail::random_unit(rng, d);

  // Closed chain through the control directions, piecewise linear then
  // renormalized.
  auto chain_point = [&](double t) {
    const double pos = t * cfg.chain_controls;
    const int k = static_cast<int>(std::floor(pos)) % cfg.chain_controls;
    const double f = pos - std::floor(pos);
    const Vector& a = controls[k];
    const Vector& b = controls[(k + 1) % cfg.chain_controls];
    return Vector(((1.0 - f) * a + f * b).normalized());
  };

  SynthGallery out;
  std::vector<FaceSet> sets;
  IdentityLabels labels;
  std::uniform_int_distribution<int> n_sets(cfg.sets_per_identity.min, cfg.sets_per_identity.max);
  std::uniform_int_distribution<int> n_ex(cfg.exemplars_per_set.min, cfg.exemplars_per_set.max);
  std::uniform_int_distribution<int> pick_condition(0, cfg.n_conditions - 1);

  for (int id = 0; id < cfg.n_identities; ++id) {
    const double t = static_cast<double>(id) / cfg.n_identities;
    const Vector own = detail::random_unit(rng, d);
    const Vector anchor =
        cfg.identity_spread *
        (cfg.transitivity * chain_point(t) + (1.0 - cfg.transitivity) * own).normalized();
    const std::string identity = "id" + std::to_string(id);
    const int count = n_sets(rng);
    for (int s = 0; s < count; ++s) {
      const int cond = pick_condition(rng);
      const double coverage =
          cfg.pose_coverage_min + (cfg.pose_coverage_max - cfg.pose_coverage_min) * u01(rng);
      const double lo = -1.0 + (2.0 - 2.0 * coverage) * u01(rng);
      const double hi = lo + 2.0 * coverage;
      const double strength = cfg.condition_spread * (0.5 + u01(rng));
      const Vector center = anchor + strength * conditions[cond];
      const double set_noise =
          cfg.noise_max > cfg.noise ? cfg.noise + (cfg.noise_max - cfg.noise) * u01(rng) : cfg.noise;
      const int n = n_ex(rng);
      Matrix x(n, d);
      for (int j = 0; j < n; ++j) {
        // Skewed pose sampling: videos dwell near one end of their range.
        const double u = u01(rng);
        const double p = lo + (hi - lo) * u * u;
        Vector e = center + cfg.pose_spread * (p * pose_a + (p * p - 1.0 / 3.0) * pose_b);
        for (Eigen::Index k = 0; k < d; ++k) e(k) += set_noise * n01(rng);
        e = (e.array() + cfg.descriptor_floor).max(0.0).matrix();
        if (!(e.norm() > 0.0)) e(0) = cfg.descriptor_floor > 0 ? cfg.descriptor_floor : 1e-6;
        x.row(j) = e.transpose();
      }
      FaceSet fs;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "s%04d_%d", id, s);
      fs.id = buf;
      fs.exemplars = std::move(x);
      fs.source_path = fs.id + ".csv";
      labels[fs.id] = identity;
      out.truth.push_back({fs.id, identity, cond, lo, hi});
      sets.push_back(std::move(fs));
    }
  }
  out.gallery.gallery = Gallery(std::move(sets));
  out.gallery.labels = std::move(labels);
  return out;
}

/// Writes the gallery directory plus `truth.tsv`
/// (set_id, identity, condition, pose_lo, pose_hi).
inline void save_synth(const std::filesystem::path& dir, const SynthGallery& sg,
                       SetFormat format = SetFormat::csv) {
  save_gallery(dir, sg.gallery, format);
  std::ofstream out(dir / "truth.tsv", std::ios::binary);
  if (!out) throw DataError("cannot write truth.tsv in '" + dir.string() + "'");
  out << "set_id\tidentity\tcondition\tpose_lo\tpose_hi\n";
  for (const auto& t : sg.truth) {
    out << t.set_id << '\t' << t.identity << '\t' << t.condition << '\t'
        << detail::format_real(t.pose_lo) << '\t' << detail::format_real(t.pose_hi) << '\n';
  }
}

}  // namespace qts

#endif  // QTS_SYNTH_HPP
