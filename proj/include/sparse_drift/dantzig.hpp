#pragma once

// Row-wise Dantzig selector for the drift matrix:
//
//   theta_hat_i = argmin ||theta||_1  s.t.  ||psi_i(theta)||_inf <= gamma,
//
// where psi_i(theta) = b_i - V theta with b_i = c_i / (n delta sigma_i^2) and
// V = G / (n sigma_i^2). Writing theta = u - v with u, v >= 0 gives the LP
//
//   min 1^T (u + v)  s.t.  V(u - v) <= b + gamma,  -V(u - v) <= gamma - b.
//
// The l1 minimizer need not be unique; only the objective value and
// feasibility are stable across pivot rules.

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

#include "sparse_drift/error.hpp"
#include "sparse_drift/model.hpp"
#include "sparse_drift/parallel.hpp"
#include "sparse_drift/qlik.hpp"
#include "sparse_drift/simplex.hpp"

namespace sparse_drift {

struct DantzigConfig {
  double c0 = 1.0;          // multiplies log(1 + p^2) / sqrt(n delta)
  double tau_feas = 1e-9;   // absolute slack on ||psi(theta_hat)||_inf
  PivotRule pivot_rule = PivotRule::kBland;
  std::size_t max_pivots = 100000;

  void check() const {
    require(std::isfinite(c0) && c0 > 0.0, ErrorCode::kInvalidArgument, "tuning constant c0 must be > 0");
    require(tau_feas >= 0.0, ErrorCode::kInvalidArgument, "feasibility tolerance must be >= 0");
    require(max_pivots > 0, ErrorCode::kInvalidArgument, "max_pivots must be positive");
  }
};

struct DantzigFit {
  std::size_t row = 0;
  Vector theta;
  double gamma = 0.0;
  double objective = 0.0;
  LpStatus status = LpStatus::kInfeasible;
  Vector residual;  // psi(theta_hat)
  double residual_sup = 0.0;
  std::size_t pivots = 0;
};

/// gamma_n = c0 * log(1 + p^2) / sqrt(n delta).
inline double gamma_rule(std::size_t n, double delta, std::size_t p, double c0) {
  require(n > 0 && delta > 0.0 && p > 0, ErrorCode::kInvalidArgument, "gamma_rule needs n, delta, p > 0");
  require(c0 > 0.0, ErrorCode::kInvalidArgument, "tuning constant c0 must be > 0");
  const double pd = static_cast<double>(p);
  return c0 * std::log1p(pd * pd) / std::sqrt(static_cast<double>(n) * delta);
}

/// Solves the LP for a given (V, b). Exposed separately so that tests and the
/// oracle comparisons can work directly on small matrices.
inline DantzigFit solve_dantzig(const Matrix& v, const Vector& b, double gamma, const DantzigConfig& cfg,
                                std::size_t row = 0) {
  cfg.check();
  const Eigen::Index p = b.size();
  require(v.rows() == p && v.cols() == p, ErrorCode::kDimensionMismatch, "V must be p x p");
  require(std::isfinite(gamma) && gamma > 0.0, ErrorCode::kInvalidArgument, "gamma must be > 0");

  Matrix a(2 * p, 2 * p);
  a << v, -v, -v, v;
  Vector rhs(2 * p);
  rhs << b.array() + gamma, gamma - b.array();
  const Vector cost = Vector::Ones(2 * p);

  LpOptions opt;
  opt.rule = cfg.pivot_rule;
  opt.max_pivots = cfg.max_pivots;
  const LpResult lp = solve_dual_simplex(a, rhs, cost, opt);

  DantzigFit fit;
  fit.row = row;
  fit.gamma = gamma;
  fit.pivots = lp.pivots;
  fit.theta = lp.x.head(p) - lp.x.tail(p);
  fit.objective = fit.theta.lpNorm<1>();
  fit.residual = b - v * fit.theta;
  fit.residual_sup = p > 0 ? fit.residual.lpNorm<Eigen::Infinity>() : 0.0;
  fit.status = lp.status;
  if (fit.status == LpStatus::kOptimal && fit.residual_sup > gamma + cfg.tau_feas)
    fit.status = LpStatus::kInfeasible;
  return fit;
}

inline DantzigFit solve_row(const SufficientStats& stats, std::size_t row, double sigma2, double gamma,
                            const DantzigConfig& cfg) {
  require(row < stats.p, ErrorCode::kInvalidArgument, "row index out of range");
  return solve_dantzig(hessian_v(stats, sigma2), score_at_zero(stats, row, sigma2), gamma, cfg, row);
}

namespace brute_detail {

using Small = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3>;
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 3, 1>;

/// Range of the first free coordinate over the polytope
///   { x in R^d : |r - W x|_inf <= gamma, |x_l| <= box },
/// with W the free columns of V and r the residual of the fixed prefix. The
/// polytope is bounded, so the range is attained at vertices, which are
/// enumerated as intersections of d active constraint planes.
inline std::optional<std::pair<double, double>> first_coordinate_range(const Small& w, const SmallVec& r, double gamma,
                                                                      double box) {
  const Eigen::Index p = w.rows(), d = w.cols();
  if (d == 1) {
    double lo = -box, hi = box;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double coef = w(j, 0);
      if (coef == 0.0) {
        if (std::abs(r[j]) > gamma) return std::nullopt;
        continue;
      }
      double a = (r[j] - gamma) / coef, c = (r[j] + gamma) / coef;
      if (coef < 0.0) std::swap(a, c);
      lo = std::max(lo, a);
      hi = std::min(hi, c);
    }
    if (lo > hi) return std::nullopt;
    return std::make_pair(lo, hi);
  }
  const Eigen::Index planes = 2 * p + 2 * d;
  auto plane = [&](Eigen::Index k, Eigen::Ref<SmallVec> normal) -> double {
    normal.setZero();
    if (k < p) {  // W x <= r + gamma
      normal = w.row(k).transpose();
      return r[k] + gamma;
    }
    if (k < 2 * p) {  // -W x <= gamma - r
      normal = -w.row(k - p).transpose();
      return gamma - r[k - p];
    }
    const Eigen::Index l = (k - 2 * p) / 2;
    normal[l] = ((k - 2 * p) % 2 == 0) ? 1.0 : -1.0;
    return box;
  };
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::array<Eigen::Index, 3> idx{};
  Small a(d, d);
  SmallVec rhs(d), normal(d), x(d);
  const double tol = 1e-9 * (1.0 + gamma + r.cwiseAbs().maxCoeff() + box);
  auto visit = [&] {
    for (Eigen::Index m = 0; m < d; ++m) {
      rhs[m] = plane(idx[static_cast<std::size_t>(m)], normal);
      a.row(m) = normal.transpose();
    }
    const Eigen::FullPivLU<Small> lu(a);
    if (!lu.isInvertible()) return;
    x = lu.solve(rhs);
    for (Eigen::Index k = 0; k < planes; ++k) {
      const double bound = plane(k, normal);
      if (normal.dot(x) > bound + tol) return;
    }
    lo = std::min(lo, x[0]);
    hi = std::max(hi, x[0]);
  };
  for (idx[0] = 0; idx[0] < planes; ++idx[0]) {
    for (idx[1] = idx[0] + 1; idx[1] < planes; ++idx[1]) {
      if (d == 2) {
        visit();
        continue;
      }
      for (idx[2] = idx[1] + 1; idx[2] < planes; ++idx[2]) visit();
    }
  }
  if (lo > hi) return std::nullopt;
  return std::make_pair(lo, hi);
}

}  // namespace brute_detail

/// Exhaustive search over the grid step * Z^p intersected with [-box, box]^p
/// for the feasible point of least l1 norm (p <= 3). Coordinates are fixed one
/// at a time; each is scanned over every grid value inside the exact range of
/// the feasible polytope's slice, in order of increasing magnitude, and the
/// last coordinate takes the feasible grid value nearest zero. Scans stop
/// once the partial l1 norm cannot beat the best point found. Ties go to the
/// first point found. Test oracle only.
inline Vector brute_force_dantzig(const Matrix& v, const Vector& b, double gamma, double grid_step, double box) {
  using brute_detail::Small;
  using brute_detail::SmallVec;
  const Eigen::Index p = b.size();
  require(p >= 1 && p <= 3, ErrorCode::kInvalidArgument, "brute force supports 1 <= p <= 3");
  require(v.rows() == p && v.cols() == p, ErrorCode::kDimensionMismatch, "V must be p x p");
  require(grid_step > 0.0 && box > 0.0, ErrorCode::kInvalidArgument, "grid step and box must be positive");
  const auto kmax = static_cast<long long>(std::floor(box / grid_step + 1e-9));
  const double feas_slack = 1e-12 * (1.0 + gamma);

  long long best_units = std::numeric_limits<long long>::max();
  SmallVec best(p), theta = SmallVec::Zero(p);
  const Small vs = v;
  const SmallVec bs = b;

  auto is_feasible = [&](const SmallVec& t) { return (bs - vs * t).cwiseAbs().maxCoeff() <= gamma + feas_slack; };

  // Grid indices in [klo, khi] visited by increasing |k| (ties: positive first).
  auto for_each_index = [&](double lo, double hi, auto&& budget, auto&& fn) {
    const long long klo = std::max<long long>(static_cast<long long>(std::ceil(lo / grid_step - 1e-9)), -kmax);
    const long long khi = std::min<long long>(static_cast<long long>(std::floor(hi / grid_step + 1e-9)), kmax);
    if (klo > khi) return;
    long long up = std::clamp<long long>(0, klo, khi), down = up - 1;
    bool up_done = false, down_done = down < klo;
    while (!up_done || !down_done) {
      const bool take_down = up_done || (!down_done && std::llabs(down) < std::llabs(up));
      const long long k = take_down ? down : up;
      if (std::llabs(k) >= budget()) {
        // magnitudes only grow in this direction
        (take_down ? down_done : up_done) = true;
        continue;
      }
      fn(k);
      if (take_down) {
        down_done = --down < klo;
      } else {
        up_done = ++up > khi;
      }
    }
  };

  std::function<void(Eigen::Index, long long)> scan = [&](Eigen::Index level, long long used) {
    SmallVec r = bs;
    for (Eigen::Index l = 0; l < level; ++l) r -= vs.col(l) * theta[l];
    const Small w = vs.rightCols(p - level);
    const auto range = brute_detail::first_coordinate_range(w, r, gamma, box);
    if (!range) return;
    auto budget = [&] { return best_units == std::numeric_limits<long long>::max() ? best_units : best_units - used; };
    if (level == p - 1) {
      // Last coordinate: the feasible grid value closest to zero.
      for_each_index(range->first, range->second, [&] { return budget(); }, [&](long long k) {
        if (used + std::llabs(k) >= best_units) return;
        theta[level] = static_cast<double>(k) * grid_step;
        if (!is_feasible(theta)) return;
        best_units = used + std::llabs(k);
        best = theta;
      });
      return;
    }
    for_each_index(range->first, range->second, [&] { return budget(); }, [&](long long k) {
      theta[level] = static_cast<double>(k) * grid_step;
      scan(level + 1, used + std::llabs(k));
      for (Eigen::Index l = level + 1; l < p; ++l) theta[l] = 0.0;
    });
  };
  scan(0, 0);
  if (best_units == std::numeric_limits<long long>::max())
    throw Error(ErrorCode::kNoFeasibleGridPoint, "no feasible grid point in the box");
  return Vector(best);
}

inline Vector brute_force_row(const SufficientStats& stats, std::size_t row, double sigma2, double gamma,
                              double grid_step, double box) {
  return brute_force_dantzig(hessian_v(stats, sigma2), score_at_zero(stats, row, sigma2), gamma, grid_step, box);
}

/// One fit per requested row (all rows when `rows` is empty), in row order.
/// Errors raised for a row are rethrown as RowError; non-optimal LP outcomes
/// are reported through DantzigFit::status.
inline std::vector<DantzigFit> fit_all_rows(const SufficientStats& stats, const SigmaHat& sigma,
                                            const DantzigConfig& cfg, IndexSet rows = {},
                                            std::size_t workers = default_workers()) {
  cfg.check();
  if (rows.empty())
    for (std::size_t i = 0; i < stats.p; ++i) rows.push_back(i);
  const double gamma = gamma_rule(stats.n, stats.delta, stats.p, cfg.c0);
  std::vector<DantzigFit> fits(rows.size());
  parallel_for(rows.size(), workers, [&](std::size_t k) {
    const std::size_t i = rows[k];
    try {
      require(i < stats.p, ErrorCode::kInvalidArgument, "row index out of range");
      fits[k] = solve_row(stats, i, sigma.variance[static_cast<Eigen::Index>(i)], gamma, cfg);
    } catch (const RowError&) {
      throw;
    } catch (const Error& e) {
      throw RowError(i, e);
    }
  });
  return fits;
}

// ---------------------------------------------------------------------------
// Fit files: JSON array of {i, theta: [[i, j, v], ...], gamma, objective, status, residual_sup}.

inline Json to_json(const DantzigFit& fit) {
  std::vector<Triple> triples;
  for (Eigen::Index j = 0; j < fit.theta.size(); ++j)
    if (fit.theta[j] != 0.0) triples.push_back({fit.row, static_cast<std::size_t>(j), fit.theta[j]});
  return Json{{"i", fit.row},
              {"theta", triples_to_json(triples)},
              {"gamma", fit.gamma},
              {"objective", fit.objective},
              {"status", to_string(fit.status)},
              {"residual_sup", fit.residual_sup}};
}

inline Json fits_to_json(const std::vector<DantzigFit>& fits) {
  Json out = Json::array();
  for (const auto& f : fits) out.push_back(to_json(f));
  return out;
}

/// Reads a fit file; theta is expanded to length p. Residuals are not stored.
inline std::vector<DantzigFit> fits_from_json(const Json& j, std::size_t p) {
  require(j.is_array(), ErrorCode::kMalformedFile, "fit file must be a JSON array");
  std::vector<DantzigFit> out;
  try {
    for (const auto& item : j) {
      DantzigFit f;
      f.row = item.at("i").get<std::size_t>();
      require(f.row < p, ErrorCode::kMalformedFile, "fit row out of range");
      f.theta = Vector::Zero(static_cast<Eigen::Index>(p));
      for (const auto& t : triples_from_json(item.at("theta"))) {
        require(t.col < p, ErrorCode::kMalformedFile, "fit column out of range");
        f.theta[static_cast<Eigen::Index>(t.col)] = t.value;
      }
      f.gamma = item.at("gamma").get<double>();
      f.objective = item.at("objective").get<double>();
      f.status = lp_status_from_string(item.at("status").get<std::string>());
      f.residual_sup = item.at("residual_sup").get<double>();
      out.push_back(std::move(f));
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kMalformedFile, std::string("fit file: ") + e.what());
  }
  return out;
}

}  // namespace sparse_drift
