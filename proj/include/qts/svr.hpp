#ifndef QTS_SVR_HPP
#define QTS_SVR_HPP

// epsilon-support vector regression with an RBF kernel, trained in the dual
//
//   min  1/2 sum_ij beta_i beta_j k(x_i, x_j) + eps sum_i (a_i + a*_i)
//        - sum_i y_i beta_i,      beta_i = a_i - a*_i
//   s.t. sum_i beta_i = 0,  a_i, a*_i in [0, C]
//
// by sequential minimal optimisation over the 2l variables (a, a*), with
// second-order working-pair selection. The predictor is
// h(x) = sum_i beta_i k(x_i, x) + b.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "qts/error.hpp"

namespace qts {

using SvrInput = std::array<double, 5>;

struct SvrConfig {
  double epsilon = 0.4;
  double cost = 1000.0;
  double kernel_gamma = 0.2;
  double kkt_tolerance = 1e-3;
  long long max_passes = 1'000'000;
  // Kernel row cache budget.
  std::size_t cache_mb = 256;
  // Dual objective is recorded every this many pair updates.
  long long trace_interval = 1000;

  void validate() const {
    if (!(epsilon > 0.0)) throw InvalidArgument("svr: epsilon must be positive");
    if (!(cost > 0.0)) throw InvalidArgument("svr: cost must be positive");
    if (!(kernel_gamma > 0.0)) throw InvalidArgument("svr: kernel gamma must be positive");
    if (!(kkt_tolerance > 0.0)) throw InvalidArgument("svr: KKT tolerance must be positive");
    if (max_passes < 1) throw InvalidArgument("svr: max_passes must be positive");
  }
};

struct SupportVector {
  SvrInput x{};
  double beta = 0.0;
};

struct SvrModel {
  std::vector<SupportVector> support;
  double bias = 0.0;
  SvrConfig config;
};

struct SvrTrainReport {
  long long iterations = 0;
  double max_kkt_violation = 0.0;
  bool converged = false;
  std::vector<double> objective_trace;
  double objective = 0.0;
};

inline double rbf_kernel(const SvrInput& a, const SvrInput& b, double gamma) {
  double d2 = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    d2 += d * d;
  }
  return std::exp(-gamma * d2);
}

inline double predict(const SvrModel& m, const SvrInput& x) {
  double h = m.bias;
  for (const auto& sv : m.support) {
    h += sv.beta * rbf_kernel(sv.x, x, m.config.kernel_gamma);
  }
  return h;
}

/// Dual objective of `beta` (a_i = max(beta_i, 0), a*_i = max(-beta_i, 0)).
inline double dual_objective(std::span<const SvrInput> x,
                             std::span<const double> y,
                             std::span<const double> beta,
                             const SvrConfig& cfg) {
  const std::size_t l = x.size();
  double quad = 0.0;
  double lin = 0.0;
  for (std::size_t i = 0; i < l; ++i) {
    if (beta[i] == 0.0) continue;
    for (std::size_t j = 0; j < l; ++j) {
      if (beta[j] == 0.0) continue;
      quad += beta[i] * beta[j] * rbf_kernel(x[i], x[j], cfg.kernel_gamma);
    }
    lin += cfg.epsilon * std::abs(beta[i]) - y[i] * beta[i];
  }
  return 0.5 * quad + lin;
}

namespace detail {

// LRU cache of kernel rows K(i, .), one per training sample.
class KernelRowCache {
 public:
  KernelRowCache(std::span<const SvrInput> x, double gamma, std::size_t budget_mb)
      : x_(x), gamma_(gamma) {
    const std::size_t row_bytes = std::max<std::size_t>(1, x.size() * sizeof(double));
    capacity_ = std::max<std::size_t>(2, (budget_mb << 20) / row_bytes);
  }

  const std::vector<double>& row(std::size_t i) {
    auto it = index_.find(i);
    if (it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      return it->second->second;
    }
    std::vector<double> data;
    if (lru_.size() >= capacity_) {
      data = std::move(lru_.back().second);
      index_.erase(lru_.back().first);
      lru_.pop_back();
    }
    data.resize(x_.size());
    for (std::size_t j = 0; j < x_.size(); ++j) {
      data[j] = rbf_kernel(x_[i], x_[j], gamma_);
    }
    lru_.emplace_front(i, std::move(data));
    index_[i] = lru_.begin();
    return lru_.front().second;
  }

 private:
  std::span<const SvrInput> x_;
  double gamma_;
  std::size_t capacity_;
  std::list<std::pair<std::size_t, std::vector<double>>> lru_;
  std::unordered_map<std::size_t,
                     std::list<std::pair<std::size_t, std::vector<double>>>::iterator>
      index_;
};

}  // namespace detail

/// Trains on (x_i, y_i). Throws InvalidArgument on empty or non-finite input.
/// `report`, when given, receives the iteration count, final KKT violation
/// and the dual objective trace.
inline SvrModel train_svr(std::span<const SvrInput> x, std::span<const double> y,
                          const SvrConfig& cfg, SvrTrainReport* report = nullptr) {
  cfg.validate();
  const std::size_t l = x.size();
  if (l == 0) throw InvalidArgument("svr: empty training corpus");
  if (y.size() != l) throw InvalidArgument("svr: feature/target count mismatch");
  for (std::size_t i = 0; i < l; ++i) {
    for (double v : x[i]) {
      if (!std::isfinite(v)) {
        throw InvalidArgument("svr: non-finite feature at sample " + std::to_string(i));
      }
    }
    if (!std::isfinite(y[i])) {
      throw InvalidArgument("svr: non-finite target at sample " + std::to_string(i));
    }
  }

  const std::size_t n = 2 * l;
  const double C = cfg.cost;
  const double tau = 1e-12;
  std::vector<double> alpha(n, 0.0);
  std::vector<double> grad(n);
  std::vector<signed char> sign(n);
  std::vector<double> lin(n);
  for (std::size_t i = 0; i < l; ++i) {
    sign[i] = +1;
    sign[i + l] = -1;
    lin[i] = cfg.epsilon - y[i];
    lin[i + l] = cfg.epsilon + y[i];
  }
  grad = lin;
  detail::KernelRowCache cache(x, cfg.kernel_gamma, cfg.cache_mb);

  auto sample = [l](std::size_t t) { return t < l ? t : t - l; };
  auto is_upper = [&](std::size_t t) { return alpha[t] >= C; };
  auto is_lower = [&](std::size_t t) { return alpha[t] <= 0.0; };
  auto objective = [&] {
    double f = 0.0;
    for (std::size_t t = 0; t < n; ++t) f += alpha[t] * (grad[t] + lin[t]);
    return 0.5 * f;
  };

  SvrTrainReport rep;
  rep.objective_trace.push_back(objective());
  long long iter = 0;
  double violation = 0.0;
  while (true) {
    // Working-pair selection (second order, Fan, Chen & Lin).
    double gmax = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t i_sel = -1;
    for (std::size_t t = 0; t < n; ++t) {
      const double v = -sign[t] * grad[t];
      const bool up = sign[t] > 0 ? !is_upper(t) : !is_lower(t);
      if (up && v >= gmax) {
        if (v > gmax || i_sel < 0) {
          gmax = v;
          i_sel = static_cast<std::ptrdiff_t>(t);
        }
      }
    }
    double gmax2 = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t j_sel = -1;
    double obj_min = std::numeric_limits<double>::infinity();
    const std::vector<double>* krow_i = nullptr;
    if (i_sel >= 0) krow_i = &cache.row(sample(static_cast<std::size_t>(i_sel)));
    for (std::size_t t = 0; t < n; ++t) {
      const bool low = sign[t] > 0 ? !is_lower(t) : !is_upper(t);
      if (!low) continue;
      const double yg = sign[t] * grad[t];
      gmax2 = std::max(gmax2, yg);
      if (i_sel < 0) continue;
      const double b = gmax + yg;
      if (b > 0.0) {
        // Q_ii + Q_tt - 2 y_i y_t Q_it with Q_ab = y_a y_b K_ab reduces to
        // K_ii + K_tt - 2 K_it.
        double a = 2.0 - 2.0 * (*krow_i)[sample(t)];
        if (a <= 0.0) a = tau;
        const double o = -(b * b) / a;
        if (o < obj_min) {
          obj_min = o;
          j_sel = static_cast<std::ptrdiff_t>(t);
        }
      }
    }
    violation = (i_sel < 0 || !std::isfinite(gmax2)) ? 0.0 : gmax + gmax2;
    if (violation < cfg.kkt_tolerance || j_sel < 0) {
      rep.converged = true;
      break;
    }
    if (iter >= cfg.max_passes) break;
    ++iter;

    const std::size_t i = static_cast<std::size_t>(i_sel);
    const std::size_t j = static_cast<std::size_t>(j_sel);
    // Copy row i: fetching row j may evict it.
    const std::vector<double> ki = *krow_i;
    const std::vector<double>& kj = cache.row(sample(j));
    const double kij = ki[sample(j)];
    const double old_ai = alpha[i];
    const double old_aj = alpha[j];
    const double yi = sign[i];
    const double yj = sign[j];
    const double qij = yi * yj * kij;

    if (yi != yj) {
      double quad = 2.0 + 2.0 * qij;
      if (quad <= 0.0) quad = tau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) { alpha[j] = 0; alpha[i] = diff; }
      } else {
        if (alpha[i] < 0) { alpha[i] = 0; alpha[j] = -diff; }
      }
      if (diff > 0) {
        if (alpha[i] > C) { alpha[i] = C; alpha[j] = C - diff; }
      } else {
        if (alpha[j] > C) { alpha[j] = C; alpha[i] = C + diff; }
      }
    } else {
      double quad = 2.0 - 2.0 * qij;
      if (quad <= 0.0) quad = tau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > C) {
        if (alpha[i] > C) { alpha[i] = C; alpha[j] = sum - C; }
      } else {
        if (alpha[j] < 0) { alpha[j] = 0; alpha[i] = sum; }
      }
      if (sum > C) {
        if (alpha[j] > C) { alpha[j] = C; alpha[i] = sum - C; }
      } else {
        if (alpha[i] < 0) { alpha[i] = 0; alpha[j] = sum; }
      }
    }

    const double dai = alpha[i] - old_ai;
    const double daj = alpha[j] - old_aj;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t s = sample(t);
      grad[t] += sign[t] * (yi * ki[s] * dai + yj * kj[s] * daj);
    }
    if (cfg.trace_interval > 0 && iter % cfg.trace_interval == 0) {
      rep.objective_trace.push_back(objective());
    }
  }

  // Bias from the KKT conditions.
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double free_sum = 0.0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = sign[t] * grad[t];
    if (is_upper(t)) {
      if (sign[t] < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (is_lower(t)) {
      if (sign[t] > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      free_sum += yg;
      ++n_free;
    }
  }
  SvrModel model;
  model.config = cfg;
  if (n_free > 0) {
    model.bias = -free_sum / static_cast<double>(n_free);
  } else {
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(l);
    // b = -rho with rho in [lb, ub].
    model.bias = std::clamp(mean, -ub, -lb);
  }
  for (std::size_t i = 0; i < l; ++i) {
    const double beta = alpha[i] - alpha[i + l];
    if (beta != 0.0) model.support.push_back({x[i], beta});
  }

  rep.iterations = iter;
  rep.max_kkt_violation = violation;
  rep.objective = objective();
  rep.objective_trace.push_back(rep.objective);
  if (report) *report = std::move(rep);
  return model;
}

/// Dual feasibility of a model: sum beta = 0 within `tol`, |beta| <= C.
inline bool dual_feasible(const SvrModel& m, double tol = 1e-6) {
  double sum = 0.0;
  for (const auto& sv : m.support) {
    if (std::abs(sv.beta) > m.config.cost + 1e-9) return false;
    sum += sv.beta;
  }
  return std::abs(sum) <= tol;
}

}  // namespace qts

#endif  // QTS_SVR_HPP
