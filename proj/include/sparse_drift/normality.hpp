#pragma once

// Standard normal CDF/quantile and a one-sample Kolmogorov-Smirnov test
// against N(0, 1).
//
// The CDF is 0.5 * erfc(-x / sqrt(2)) using the C library erfc, which is
// accurate to a few ulp in double precision (far below 1e-12 absolute).
// The asymptotic p-value is Q(lambda) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lambda^2)
// with lambda = sqrt(m) D, truncated at 100 terms; for lambda < 0.2 the
// series has not converged at 100 terms and Q(lambda) > 1 - 1e-20, so 1 is
// returned.

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sparse_drift/error.hpp"

namespace sparse_drift {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_quantile(double prob) {
  require(prob > 0.0 && prob < 1.0, ErrorCode::kInvalidArgument, "normal quantile needs p in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), prob);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t samples = 0;
};

inline double ks_p_value(double lambda) {
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1) ? term : -term;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

inline KsResult ks_normality(std::vector<double> z, std::size_t min_samples = 20) {
  require(z.size() >= min_samples, ErrorCode::kInvalidArgument,
          "KS test needs at least " + std::to_string(min_samples) + " samples, got " + std::to_string(z.size()));
  for (double v : z) require(std::isfinite(v), ErrorCode::kInvalidArgument, "KS test sample is not finite");
  std::sort(z.begin(), z.end());
  const double m = static_cast<double>(z.size());
  double d = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double f = normal_cdf(z[k]);
    d = std::max({d, static_cast<double>(k + 1) / m - f, f - static_cast<double>(k) / m});
  }
  return {d, ks_p_value(std::sqrt(m) * d), z.size()};
}

}  // namespace sparse_drift
