#ifndef QTS_MODEL_IO_HPP
#define QTS_MODEL_IO_HPP

// Plain-text model files:
//
//   gamma=<kernel gamma>
//   epsilon=<epsilon>
//   cost=<C>
//   bias=<b>
//   beta, v1, v2, v3, v4, v5      (one line per support vector)
//
// Reals are written in shortest round-trip form, so a reloaded model
// predicts bit-identically.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "qts/corpus.hpp"
#include "qts/detail/text.hpp"
#include "qts/error.hpp"
#include "qts/svr.hpp"

namespace qts {

inline void save_model(const std::filesystem::path& path, const SvrModel& m) {
  if (!dual_feasible(m)) {
    throw InvalidArgument("save_model: model violates dual feasibility");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "gamma=" << detail::format_real(m.config.kernel_gamma) << '\n'
      << "epsilon=" << detail::format_real(m.config.epsilon) << '\n'
      << "cost=" << detail::format_real(m.config.cost) << '\n'
      << "bias=" << detail::format_real(m.bias) << '\n';
  for (const auto& sv : m.support) {
    out << detail::format_real(sv.beta);
    for (double v : sv.x) out << ", " << detail::format_real(v);
    out << '\n';
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

inline SvrModel load_model(const std::filesystem::path& path) {
  const std::string text = detail::read_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, double> header;
  SvrModel m;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (auto eq = t.find('='); eq != std::string_view::npos) {
      if (!m.support.empty()) throw DataError(where + ": header after support vectors");
      const std::string key(detail::trim(t.substr(0, eq)));
      auto v = detail::parse_real(t.substr(eq + 1));
      if (!v || !std::isfinite(*v)) throw DataError(where + ": malformed value for '" + key + "'");
      if (key != "gamma" && key != "epsilon" && key != "cost" && key != "bias") {
        throw DataError(where + ": unknown header key '" + key + "'");
      }
      header[key] = *v;
      continue;
    }
    auto fields = detail::split(t, ',');
    if (fields.size() != 6) throw DataError(where + ": expected beta and 5 features");
    SupportVector sv;
    auto beta = detail::parse_real(fields[0]);
    if (!beta || !std::isfinite(*beta)) throw DataError(where + ": malformed beta");
    sv.beta = *beta;
    for (int k = 0; k < 5; ++k) {
      auto v = detail::parse_real(fields[1 + k]);
      if (!v || !std::isfinite(*v)) throw DataError(where + ": malformed feature");
      sv.x[k] = *v;
    }
    m.support.push_back(sv);
  }
  for (const char* key : {"gamma", "epsilon", "cost", "bias"}) {
    if (!header.count(key)) {
      throw DataError(path.string() + ": missing header '" + key + "='");
    }
  }
  m.config.kernel_gamma = header["gamma"];
  m.config.epsilon = header["epsilon"];
  m.config.cost = header["cost"];
  m.bias = header["bias"];
  try {
    m.config.validate();
  } catch (const InvalidArgument& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  double sum = 0.0;
  for (const auto& sv : m.support) {
    if (std::abs(sv.beta) > m.config.cost + 1e-9) {
      throw DataError(path.string() + ": |beta| exceeds cost");
    }
    sum += sv.beta;
  }
  if (std::abs(sum) > 1e-6) {
    throw DataError(path.string() + ": coefficients sum to " +
                    detail::format_real(sum) + ", expected 0");
  }
  return m;
}

}  // namespace qts

#endif  // QTS_MODEL_IO_HPP
