#pragma once

// Sufficient statistics of a discretely observed path and the quasi-likelihood
// quantities built from them:
//
//   G     = sum_k phi(X_{k-1}) phi(X_{k-1})^T
//   c_i   = sum_k phi(X_{k-1}) (X_k^i - X_{k-1}^i)
//   q_i   = sum_k (X_k^i - X_{k-1}^i)^2
//
//   sigma_hat_i^2 = q_i / (n delta)
//   psi_i(theta)  = (c_i - delta G theta) / (n delta sigma2)
//   V             = G / (n sigma2)
//
// Sums are formed over blocks of consecutive increments and the block
// results are combined with Neumaier compensation, so the totals do not
// depend on how the path is chunked downstream.

#include <algorithm>
#include <cmath>
#include <string>

#include "sparse_drift/error.hpp"
#include "sparse_drift/model.hpp"
#include "sparse_drift/model_json.hpp"

namespace sparse_drift {

/// Neumaier-compensated accumulation over a dense array.
class CompensatedMatrix {
 public:
  CompensatedMatrix(Eigen::Index rows, Eigen::Index cols)
      : sum_(Matrix::Zero(rows, cols)), comp_(Matrix::Zero(rows, cols)) {}

  void add(const Matrix& term) {
    for (Eigen::Index k = 0; k < sum_.size(); ++k) {
      double& s = sum_.data()[k];
      const double x = term.data()[k];
      const double t = s + x;
      if (std::abs(s) >= std::abs(x))
        comp_.data()[k] += (s - t) + x;
      else
        comp_.data()[k] += (x - t) + s;
      s = t;
    }
  }

  Matrix value() const { return sum_ + comp_; }

 private:
  Matrix sum_;
  Matrix comp_;
};

struct SufficientStats {
  std::size_t p = 0;
  std::size_t n = 0;
  double delta = 0.0;
  Matrix gram;    // p x p
  Matrix cross;   // p x p; column i is c_i
  Vector sq_incr; // q

  double horizon() const { return static_cast<double>(n) * delta; }
  Vector c(std::size_t i) const { return cross.col(static_cast<Eigen::Index>(i)); }
};

inline SufficientStats accumulate_stats(const PathData& path, const PhiBasis& basis,
                                        Eigen::Index block_rows = 256) {
  const std::size_t p = path.dimension();
  const std::size_t n = path.grid.n();
  require(basis.dimension() == p, ErrorCode::kDimensionMismatch, "phi basis length does not match path");
  require(n >= 1, ErrorCode::kInvalidArgument, "path needs at least one increment");
  const auto pp = static_cast<Eigen::Index>(p);

  CompensatedMatrix gram(pp, pp), cross(pp, pp), sq(pp, 1);
  Matrix phi_block(block_rows, pp), incr_block(block_rows, pp);
  std::vector<double> phi_row(p);

  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(block_rows)) {
    const auto rows = static_cast<Eigen::Index>(std::min<std::size_t>(static_cast<std::size_t>(block_rows), n - start));
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto k = static_cast<Eigen::Index>(start) + r;  // increment k+1 uses X_k as left endpoint
      for (std::size_t j = 0; j < p; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        phi_block(r, jj) = basis(j, path.values(k, jj));
        incr_block(r, jj) = path.values(k + 1, jj) - path.values(k, jj);
      }
    }
    const auto phis = phi_block.topRows(rows);
    const auto incs = incr_block.topRows(rows);
    Matrix g = phis.transpose() * phis;
    Matrix c = phis.transpose() * incs;
    Matrix q = incs.array().square().colwise().sum().transpose().matrix();
    gram.add(g);
    cross.add(c);
    sq.add(q);
  }

  SufficientStats out;
  out.p = p;
  out.n = n;
  out.delta = path.grid.delta();
  out.gram = gram.value();
  out.gram = 0.5 * (out.gram + out.gram.transpose()).eval();
  out.cross = cross.value();
  out.sq_incr = sq.value().col(0);
  return out;
}

struct SigmaHat {
  Vector variance;  // sigma_hat_i^2
};

inline SigmaHat sigma_hat(const SufficientStats& stats) {
  require(stats.horizon() > 0.0, ErrorCode::kInvalidArgument, "n * delta must be positive");
  return {stats.sq_incr / stats.horizon()};
}

inline void require_positive_variance(double sigma2) {
  require(std::isfinite(sigma2) && sigma2 > 0.0, ErrorCode::kDegenerateDiffusion,
          "degenerate diffusion estimate (sigma^2 = " + std::to_string(sigma2) + ")");
}

/// psi_n for drift row i at theta.
inline Vector gradient_psi(const SufficientStats& stats, std::size_t row, double sigma2, const Vector& theta) {
  require_positive_variance(sigma2);
  require(row < stats.p && static_cast<std::size_t>(theta.size()) == stats.p, ErrorCode::kDimensionMismatch,
          "gradient_psi: row or theta length out of range");
  return (stats.c(row) - stats.delta * (stats.gram * theta)) / (stats.horizon() * sigma2);
}

/// psi_n(0) = c_i / (n delta sigma2); the LP right-hand side.
inline Vector score_at_zero(const SufficientStats& stats, std::size_t row, double sigma2) {
  require_positive_variance(sigma2);
  return stats.c(row) / (stats.horizon() * sigma2);
}

/// V_n = G / (n sigma2); independent of theta.
inline Matrix hessian_v(const SufficientStats& stats, double sigma2) {
  require_positive_variance(sigma2);
  return stats.gram / (static_cast<double>(stats.n) * sigma2);
}

// ---------------------------------------------------------------------------
// Stats cache file: {"format": "sde-stats v1", "n", "delta", "p", "G", "c", "q"}
// where c[i] is the cross vector of drift row i.

inline constexpr const char* kStatsFormat = "sde-stats v1";

inline Json to_json(const SufficientStats& s) {
  return Json{{"format", kStatsFormat}, {"n", s.n}, {"delta", s.delta}, {"p", s.p},
              {"G", matrix_to_json(s.gram)},
              {"c", matrix_to_json(s.cross.transpose())},
              {"q", vector_to_json(s.sq_incr)}};
}

inline SufficientStats stats_from_json(const Json& j) {
  try {
    require(j.value("format", std::string()) == kStatsFormat, ErrorCode::kMalformedFile,
            "stats file must have format 'sde-stats v1'");
    SufficientStats s;
    s.n = j.at("n").get<std::size_t>();
    s.delta = j.at("delta").get<double>();
    s.p = j.at("p").get<std::size_t>();
    s.gram = matrix_from_json(j.at("G"));
    s.cross = matrix_from_json(j.at("c")).transpose();
    s.sq_incr = vector_from_json(j.at("q"));
    const auto pp = static_cast<Eigen::Index>(s.p);
    require(s.gram.rows() == pp && s.gram.cols() == pp && s.cross.rows() == pp && s.cross.cols() == pp &&
                s.sq_incr.size() == pp,
            ErrorCode::kMalformedFile, "stats arrays do not match p");
    require(s.n >= 1 && s.delta > 0.0, ErrorCode::kMalformedFile, "stats need n >= 1 and delta > 0");
    return s;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kMalformedFile, std::string("stats file: ") + e.what());
  }
}

inline void write_stats_file(const std::string& path, const SufficientStats& s) { write_json_file(path, to_json(s)); }
inline SufficientStats read_stats_file(const std::string& path) { return stats_from_json(read_json_file(path)); }

}  // namespace sparse_drift
