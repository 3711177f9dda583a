#pragma once

// Euler-Maruyama simulation with sub-observation refinement and burn-in, and
// the `sde-path v1` text format.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sparse_drift/error.hpp"
#include "sparse_drift/model.hpp"
#include "sparse_drift/model_json.hpp"
#include "sparse_drift/rng.hpp"

namespace sparse_drift {

struct SimConfig {
  std::size_t substeps = 8;
  double burn_in = 10.0;  // time units discarded before t_0
  std::uint64_t seed = 0;
  /// Only generator currently provided; kept in files for provenance.
  static constexpr const char* kRngAlgorithm = "philox4x32-10";

  void check() const {
    require(substeps >= 1, ErrorCode::kInvalidArgument, "substeps must be >= 1");
    require(std::isfinite(burn_in) && burn_in >= 0.0, ErrorCode::kInvalidArgument,
            "burn-in must be non-negative");
  }
};

/// drift[i] = sum_j Theta_ij phi_j(x_j). `phi_scratch` must have length p.
inline void drift_into(const ModelSpec& spec, std::span<const double> x, std::span<double> phi_scratch,
                       std::span<double> drift) {
  spec.phi().eval_into(x, phi_scratch);
  for (std::size_t i = 0; i < spec.dimension(); ++i) {
    double acc = 0.0;
    for (const auto& e : spec.theta().row(i)) acc += e.value * phi_scratch[e.col];
    drift[i] = acc;
  }
}

/// Number of Euler steps of size `step` covering the burn-in window.
inline std::size_t burn_in_steps(double burn_in, double step) {
  return burn_in <= 0.0 ? 0 : static_cast<std::size_t>(std::ceil(burn_in / step));
}

/// Runs the Euler scheme from `x0`, discarding `burn_steps` steps, then
/// recording every `substeps`-th state. `noise(z)` fills z (length p) with
/// standard normals for one step; the Brownian increment is sqrt(step) * z.
template <class NoiseFn>
RowMatrix euler_observe(const ModelSpec& spec, const SamplingGrid& grid, std::size_t substeps, Vector x0,
                        std::size_t burn_steps, NoiseFn&& noise) {
  const std::size_t p = spec.dimension();
  require(static_cast<std::size_t>(x0.size()) == p, ErrorCode::kDimensionMismatch,
          "initial state length does not match p");
  const double step = grid.delta() / static_cast<double>(substeps);
  const double root_step = std::sqrt(step);
  std::vector<double> x(x0.data(), x0.data() + p), phi(p), drift(p), z(p);
  const Vector& sigma = spec.sigma();

  std::size_t step_index = 0;
  auto advance = [&] {
    drift_into(spec, x, phi, drift);
    noise(std::span<double>(z));
    for (std::size_t i = 0; i < p; ++i) {
      x[i] += drift[i] * step + sigma[static_cast<Eigen::Index>(i)] * root_step * z[i];
      if (!std::isfinite(x[i]))
        throw Error(ErrorCode::kNonFiniteState,
                    "state became non-finite at Euler step " + std::to_string(step_index) +
                        " (coordinate " + std::to_string(i) + ")");
    }
    ++step_index;
  };

  for (std::size_t s = 0; s < burn_steps; ++s) advance();

  RowMatrix out(static_cast<Eigen::Index>(grid.n() + 1), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < p; ++i) out(0, static_cast<Eigen::Index>(i)) = x[i];
  for (std::size_t k = 1; k <= grid.n(); ++k) {
    for (std::size_t s = 0; s < substeps; ++s) advance();
    for (std::size_t i = 0; i < p; ++i) out(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = x[i];
  }
  return out;
}

inline Vector draw_initial_state(const InitialLaw& law, std::uint64_t seed) {
  Vector x = law.mean;
  if (law.kind == InitialLaw::Kind::kGaussian) {
    RandomStream rng(seed, Stream::kInitialState);
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += law.sd[i] * rng.normal();
  }
  return x;
}

/// Deterministic in (spec, grid, cfg). Validation of the model is the
/// caller's responsibility; only shapes are checked here.
inline PathData simulate(const ModelSpec& spec, const SamplingGrid& grid, const SimConfig& cfg) {
  cfg.check();
  const double step = grid.delta() / static_cast<double>(cfg.substeps);
  RandomStream brownian(cfg.seed, Stream::kBrownian);
  auto noise = [&brownian](std::span<double> z) {
    for (double& v : z) v = brownian.normal();
  };
  RowMatrix values = euler_observe(spec, grid, cfg.substeps, draw_initial_state(spec.init(), cfg.seed),
                                   burn_in_steps(cfg.burn_in, step), noise);
  return PathData(grid, std::move(values), cfg.seed, fingerprint(spec));
}

// ---------------------------------------------------------------------------
// Path files:
//   # sde-path v1 n=<int> p=<int> delta=<decimal> seed=<uint64>
//   t,x1,...,xp
//   <n+1 rows, 17 significant digits, LF endings>

inline std::string format_double(double v) {
  char buf[40];
  const int len = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(len));
}

inline void write_path(const PathData& path, std::ostream& out) {
  const std::size_t p = path.dimension();
  out << "# sde-path v1 n=" << path.grid.n() << " p=" << p << " delta=" << format_double(path.grid.delta())
      << " seed=" << path.seed << '\n';
  out << 't';
  for (std::size_t j = 1; j <= p; ++j) out << ",x" << j;
  out << '\n';
  std::string line;
  for (Eigen::Index k = 0; k < path.values.rows(); ++k) {
    line = format_double(path.grid.time(static_cast<std::size_t>(k)));
    for (Eigen::Index j = 0; j < path.values.cols(); ++j) {
      line += ',';
      line += format_double(path.values(k, j));
    }
    line += '\n';
    out << line;
  }
}

namespace detail {

inline double parse_double(std::string_view text, std::size_t line_no) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty())
    throw Error(ErrorCode::kMalformedFile,
                "line " + std::to_string(line_no) + ": non-numeric cell '" + std::string(text) + "'");
  return v;
}

template <class T>
T parse_integer(std::string_view text, const std::string& key) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw Error(ErrorCode::kMalformedFile, "header: bad value for " + key);
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

inline PathData read_path(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::kMalformedFile, "empty path file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const std::string_view magic = "# sde-path v1";
  require(line.rfind(magic, 0) == 0, ErrorCode::kMalformedFile, "missing '# sde-path v1' header");
  std::optional<std::size_t> n, p;
  std::optional<double> delta;
  std::optional<std::uint64_t> seed;
  for (auto token : detail::split(std::string_view(line).substr(magic.size()), ' ')) {
    if (token.empty()) continue;
    const auto eq = token.find('=');
    require(eq != std::string_view::npos, ErrorCode::kMalformedFile, "header token without '='");
    const std::string key(token.substr(0, eq));
    const auto value = token.substr(eq + 1);
    if (key == "n") n = detail::parse_integer<std::size_t>(value, key);
    else if (key == "p") p = detail::parse_integer<std::size_t>(value, key);
    else if (key == "seed") seed = detail::parse_integer<std::uint64_t>(value, key);
    else if (key == "delta") delta = detail::parse_double(value, 1);
  }
  require(n && p && delta && seed, ErrorCode::kMalformedFile, "header must define n, p, delta and seed");
  require(*p > 0, ErrorCode::kMalformedFile, "header p must be positive");

  require(static_cast<bool>(std::getline(in, line)), ErrorCode::kMalformedFile, "missing column header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto columns = detail::split(line, ',');
  require(columns.size() == *p + 1 && columns[0] == "t", ErrorCode::kMalformedFile,
          "column header must be t,x1,...,xp");

  RowMatrix values(static_cast<Eigen::Index>(*n + 1), static_cast<Eigen::Index>(*p));
  std::size_t rows = 0;
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    require(rows < *n + 1, ErrorCode::kMalformedFile,
            "more data rows than n+1 = " + std::to_string(*n + 1));
    const auto cells = detail::split(line, ',');
    require(cells.size() == *p + 1, ErrorCode::kMalformedFile,
            "line " + std::to_string(line_no) + ": expected " + std::to_string(*p + 1) + " cells");
    detail::parse_double(cells[0], line_no);
    for (std::size_t j = 0; j < *p; ++j)
      values(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(j)) =
          detail::parse_double(cells[j + 1], line_no);
    ++rows;
  }
  require(rows == *n + 1, ErrorCode::kMalformedFile,
          "expected " + std::to_string(*n + 1) + " data rows, found " + std::to_string(rows));
  return PathData(SamplingGrid(*n, *delta), std::move(values), *seed);
}

inline void write_path_file(const std::string& file, const PathData& path) {
  std::ofstream out(file, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + file);
  write_path(path, out);
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + file);
}

inline PathData read_path_file(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + file);
  return read_path(in);
}

}  // namespace sparse_drift
