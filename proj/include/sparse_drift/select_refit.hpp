#pragma once

// Support selection by thresholding the Dantzig estimate at sqrt(gamma), and
// the post-selection refit: on the selected set T the restricted
// quasi-likelihood equation psi(theta)_T = 0 with theta_{T^c} = 0 reduces to
//
//   delta * G_TT * theta_T = c_{i,T},
//
// which does not involve sigma. sigma_hat^2 enters only the plug-in
// covariance (T_n * V_TT)^{-1} with V_TT = G_TT / (n sigma^2), T_n = n delta.

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>
#include <vector>

#include "sparse_drift/dantzig.hpp"
#include "sparse_drift/error.hpp"
#include "sparse_drift/model.hpp"
#include "sparse_drift/model_json.hpp"
#include "sparse_drift/normality.hpp"
#include "sparse_drift/qlik.hpp"

namespace sparse_drift {

inline constexpr double kRefitConditionLimit = 1e12;

inline IndexSet threshold_support(const Vector& theta, double gamma) {
  require(std::isfinite(gamma) && gamma > 0.0, ErrorCode::kInvalidArgument, "gamma must be > 0");
  const double cut = std::sqrt(gamma);
  IndexSet out;
  for (Eigen::Index j = 0; j < theta.size(); ++j)
    if (std::abs(theta[j]) > cut) out.push_back(static_cast<std::size_t>(j));
  return out;
}

inline IndexSet threshold_support(const DantzigFit& fit, double gamma) { return threshold_support(fit.theta, gamma); }

struct SelectionRefit {
  std::size_t row = 0;
  IndexSet support;
  Vector theta;               // length p, zero off support
  Matrix covariance;          // |T| x |T|, filled by asymptotic_ci
  Vector se, ci_lo, ci_hi;    // per support coordinate
  double level = 0.0;         // 0 until asymptotic_ci ran
  double score_sup = 0.0;     // ||psi(theta)_T||_inf after the solve
  std::vector<std::string> flags;

  bool has_ci() const { return level > 0.0; }
};

inline Matrix restrict(const Matrix& m, const IndexSet& t) {
  const auto s = static_cast<Eigen::Index>(t.size());
  Matrix out(s, s);
  for (Eigen::Index a = 0; a < s; ++a)
    for (Eigen::Index b = 0; b < s; ++b)
      out(a, b) = m(static_cast<Eigen::Index>(t[static_cast<std::size_t>(a)]), static_cast<Eigen::Index>(t[static_cast<std::size_t>(b)]));
  return out;
}

inline void check_support(const IndexSet& t, std::size_t p) {
  for (std::size_t k = 0; k < t.size(); ++k) {
    require(t[k] < p, ErrorCode::kInvalidArgument, "support index " + std::to_string(t[k]) + " out of range");
    require(k == 0 || t[k] > t[k - 1], ErrorCode::kInvalidArgument, "support must be sorted and duplicate-free");
  }
}

/// Relative condition number of a symmetric matrix (infinite when not positive definite).
inline double spd_condition(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

/// sigma2 is only used for the reported score residual.
inline SelectionRefit refit_row(const SufficientStats& stats, std::size_t row, double sigma2, const IndexSet& support) {
  require(row < stats.p, ErrorCode::kInvalidArgument, "row index out of range");
  check_support(support, stats.p);
  SelectionRefit out;
  out.row = row;
  out.support = support;
  out.theta = Vector::Zero(static_cast<Eigen::Index>(stats.p));
  if (support.empty()) {
    out.flags.push_back("empty-support");
    return out;
  }
  const Matrix a = stats.delta * restrict(stats.gram, support);
  const Vector c = stats.c(row);
  Vector rhs(static_cast<Eigen::Index>(support.size()));
  for (std::size_t k = 0; k < support.size(); ++k) rhs[static_cast<Eigen::Index>(k)] = c[static_cast<Eigen::Index>(support[k])];

  const double cond = spd_condition(a);
  if (!(cond <= kRefitConditionLimit))
    throw Error(ErrorCode::kRefitSingular,
                "row " + std::to_string(row) + ": restricted Gram matrix is singular (condition " + std::to_string(cond) + ")");
  const Eigen::LDLT<Matrix> ldlt(a);
  Vector sol = ldlt.solve(rhs);
  sol += ldlt.solve(rhs - a * sol);  // one step of iterative refinement
  for (std::size_t k = 0; k < support.size(); ++k) out.theta[static_cast<Eigen::Index>(support[k])] = sol[static_cast<Eigen::Index>(k)];

  if (std::isfinite(sigma2) && sigma2 > 0.0) {
    const Vector psi = gradient_psi(stats, row, sigma2, out.theta);
    for (auto j : support) out.score_sup = std::max(out.score_sup, std::abs(psi[static_cast<Eigen::Index>(j)]));
  }
  return out;
}

/// Fills the plug-in covariance (T_n V_TT)^{-1} and two-sided intervals.
inline SelectionRefit asymptotic_ci(SelectionRefit refit, const SufficientStats& stats, double sigma2, double level) {
  require(level > 0.0 && level < 1.0, ErrorCode::kInvalidArgument, "confidence level must be in (0, 1)");
  require_positive_variance(sigma2);
  check_support(refit.support, stats.p);
  if (refit.support.empty()) return refit;
  const Matrix v = restrict(stats.gram, refit.support) / (static_cast<double>(stats.n) * sigma2);
  require(spd_condition(v) <= kRefitConditionLimit, ErrorCode::kRefitSingular,
          "row " + std::to_string(refit.row) + ": restricted V is not invertible");
  refit.covariance = (stats.horizon() * v).inverse();
  refit.covariance = 0.5 * (refit.covariance + refit.covariance.transpose()).eval();
  const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
  const auto s = static_cast<Eigen::Index>(refit.support.size());
  refit.se.resize(s);
  refit.ci_lo.resize(s);
  refit.ci_hi.resize(s);
  for (Eigen::Index k = 0; k < s; ++k) {
    refit.se[k] = std::sqrt(refit.covariance(k, k));
    const double th = refit.theta[static_cast<Eigen::Index>(refit.support[static_cast<std::size_t>(k)])];
    refit.ci_lo[k] = th - z * refit.se[k];
    refit.ci_hi[k] = th + z * refit.se[k];
  }
  refit.level = level;
  return refit;
}

struct QEstimate {
  Matrix v_tt;             // V restricted to T
  double gap = std::nan("");  // sup-norm distance to a reference, when one is known
};

inline QEstimate q_estimate(const SufficientStats& stats, double sigma2, const IndexSet& support) {
  require_positive_variance(sigma2);
  check_support(support, stats.p);
  return {restrict(stats.gram, support) / (static_cast<double>(stats.n) * sigma2)};
}

inline double hessian_gap(const SufficientStats& stats, double sigma2, const IndexSet& support, const Matrix& reference) {
  const QEstimate q = q_estimate(stats, sigma2, support);
  require(reference.rows() == q.v_tt.rows() && reference.cols() == q.v_tt.cols(), ErrorCode::kDimensionMismatch,
          "reference must be |T| x |T|");
  if (q.v_tt.size() == 0) return 0.0;
  return (q.v_tt - reference).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Selection files: JSON array of {i, support, theta2: [[i, j, v], ...], se, ci, flags}.

inline Json to_json(const SelectionRefit& r) {
  std::vector<Triple> triples;
  for (auto j : r.support)
    if (r.theta[static_cast<Eigen::Index>(j)] != 0.0) triples.push_back({r.row, j, r.theta[static_cast<Eigen::Index>(j)]});
  Json ci = Json::array();
  for (Eigen::Index k = 0; k < r.ci_lo.size(); ++k) ci.push_back({r.ci_lo[k], r.ci_hi[k]});
  Json out{{"i", r.row},
           {"support", r.support},
           {"theta2", triples_to_json(triples)},
           {"se", r.has_ci() ? vector_to_json(r.se) : Json::array()},
           {"ci", ci},
           {"flags", r.flags}};
  if (r.has_ci()) out["level"] = r.level;
  return out;
}

}  // namespace sparse_drift
