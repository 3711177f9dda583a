#pragma once

// Dense-tableau dual simplex for
//
//   minimize c^T x  subject to  A x <= r,  x >= 0,   with c >= 0.
//
// Nonnegative costs make the all-slack basis dual feasible, so no phase one
// is needed whatever the sign of r. Termination is guaranteed by Bland's
// rule (smallest-index leaving row among infeasible rows, smallest-index
// entering column among ratio ties). The largest-infeasibility rule is
// faster in practice and switches to Bland after a run of degenerate pivots.
//
// On exit the basic solution is recomputed from the original data with an LU
// factorization of the basis matrix, so returned values do not carry the
// round-off accumulated in the tableau.

#include <Eigen/LU>

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "sparse_drift/error.hpp"
#include "sparse_drift/model.hpp"

namespace sparse_drift {

enum class PivotRule { kBland, kLargestInfeasibility };

inline const char* to_string(PivotRule rule) {
  return rule == PivotRule::kBland ? "bland" : "largest-infeasibility";
}

inline PivotRule pivot_rule_from_string(const std::string& s) {
  if (s == "bland") return PivotRule::kBland;
  if (s == "largest-infeasibility") return PivotRule::kLargestInfeasibility;
  throw Error(ErrorCode::kInvalidArgument, "unknown pivot rule '" + s + "'");
}

enum class LpStatus { kOptimal, kInfeasible, kPivotLimit };

inline const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::kOptimal: return "optimal";
    case LpStatus::kInfeasible: return "infeasible";
    case LpStatus::kPivotLimit: return "pivot-limit";
  }
  return "unknown";
}

inline LpStatus lp_status_from_string(const std::string& s) {
  if (s == "optimal") return LpStatus::kOptimal;
  if (s == "infeasible") return LpStatus::kInfeasible;
  if (s == "pivot-limit") return LpStatus::kPivotLimit;
  throw Error(ErrorCode::kMalformedFile, "unknown LP status '" + s + "'");
}

struct LpOptions {
  PivotRule rule = PivotRule::kBland;
  std::size_t max_pivots = 100000;
  double primal_tol = 1e-11;  // relative to 1 + max |r|
  double pivot_tol = 1e-10;
  std::size_t degenerate_switch = 50;  // largest-infeasibility -> Bland
};

struct LpResult {
  LpStatus status = LpStatus::kInfeasible;
  Vector x;  // structural variables
  double objective = 0.0;
  std::size_t pivots = 0;
  std::vector<std::size_t> basis;  // column index per row; >= N means slack
};

inline LpResult solve_dual_simplex(const Matrix& a, const Vector& rhs, const Vector& cost,
                                   const LpOptions& opt = {}) {
  const Eigen::Index m = a.rows();
  const Eigen::Index nvar = a.cols();
  require(rhs.size() == m && cost.size() == nvar, ErrorCode::kDimensionMismatch, "LP shape mismatch");
  require((cost.array() >= 0.0).all(), ErrorCode::kInvalidArgument, "dual simplex needs nonnegative costs");

  const Eigen::Index ncol = nvar + m;
  RowMatrix tab(m, ncol + 1);  // last column is the basic solution
  tab.leftCols(nvar) = a;
  tab.block(0, nvar, m, m).setIdentity();
  tab.col(ncol) = rhs;
  Vector reduced = Vector::Zero(ncol);
  reduced.head(nvar) = cost;

  std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
  std::vector<char> is_basic(static_cast<std::size_t>(ncol), 0);
  for (Eigen::Index i = 0; i < m; ++i) {
    basis[static_cast<std::size_t>(i)] = nvar + i;
    is_basic[static_cast<std::size_t>(nvar + i)] = 1;
  }

  const double tol = opt.primal_tol * (1.0 + (rhs.size() ? rhs.cwiseAbs().maxCoeff() : 0.0));
  bool bland = opt.rule == PivotRule::kBland;
  std::size_t degenerate_run = 0;
  LpResult result;

  for (;;) {
    // Leaving row.
    Eigen::Index leave = -1;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double v = tab(i, ncol);
      if (v >= -tol) continue;
      if (leave < 0) {
        leave = i;
      } else if (bland) {
        if (basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)]) leave = i;
      } else if (v < tab(leave, ncol)) {
        leave = i;
      }
    }
    if (leave < 0) {
      result.status = LpStatus::kOptimal;
      break;
    }
    if (result.pivots >= opt.max_pivots) {
      result.status = LpStatus::kPivotLimit;
      break;
    }

    // Entering column by the dual ratio test.
    Eigen::Index enter = -1;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < ncol; ++j) {
      if (is_basic[static_cast<std::size_t>(j)]) continue;
      const double alpha = tab(leave, j);
      if (alpha >= -opt.pivot_tol) continue;
      const double ratio = std::max(reduced[j], 0.0) / -alpha;
      if (enter < 0 || ratio < best - 1e-12 * (1.0 + best)) {
        best = ratio;
        enter = j;
      }
    }
    if (enter < 0) {
      result.status = LpStatus::kInfeasible;
      break;
    }

    if (best <= 1e-14) {
      if (++degenerate_run > opt.degenerate_switch) bland = true;
    } else {
      degenerate_run = 0;
    }

    const double pivot = tab(leave, enter);
    tab.row(leave) /= pivot;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (i == leave) continue;
      const double factor = tab(i, enter);
      if (factor != 0.0) tab.row(i) -= factor * tab.row(leave);
    }
    const double dfac = reduced[enter];
    if (dfac != 0.0) reduced -= dfac * tab.row(leave).head(ncol).transpose();

    is_basic[static_cast<std::size_t>(basis[static_cast<std::size_t>(leave)])] = 0;
    basis[static_cast<std::size_t>(leave)] = enter;
    is_basic[static_cast<std::size_t>(enter)] = 1;
    ++result.pivots;
  }

  // Recover x from the final basis using the original data.
  Matrix bmat(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index col = basis[static_cast<std::size_t>(i)];
    if (col < nvar)
      bmat.col(i) = a.col(col);
    else
      bmat.col(i) = Vector::Unit(m, col - nvar);
  }
  Vector xb;
  if (m > 0) {
    Eigen::PartialPivLU<Matrix> lu(bmat);
    xb = lu.solve(rhs);
    if (!xb.allFinite()) xb = tab.col(ncol);
  }
  result.x = Vector::Zero(nvar);
  result.basis.resize(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index col = basis[static_cast<std::size_t>(i)];
    result.basis[static_cast<std::size_t>(i)] = static_cast<std::size_t>(col);
    if (col < nvar) result.x[col] = std::max(xb[i], 0.0);
  }
  result.objective = cost.dot(result.x);
  return result;
}

}  // namespace sparse_drift
