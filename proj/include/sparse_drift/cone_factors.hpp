#pragma once

// Curvature factors of a PSD matrix V over the cone
//   C_T = { h : ||h_{T^c}||_1 <= ||h_T||_1 },  S = |T|:
//
//   kappa(T, V)  = inf sqrt(S) sqrt(h'Vh) / ||h_T||_1           (compatibility)
//   F_q(T, V)    = inf S^(1/q) h'Vh / (||h_T||_1 ||h||_q)        (weak cone invertibility)
//   F_inf(T, V)  = inf sqrt(h'Vh) / ||h||_inf
//   RE(T, V)     = inf sqrt(h'Vh) / ||h||_2                       (restricted eigenvalue)
//
// kappa is computed exactly. By homogeneity we may fix ||h_T||_1 = 1; fixing
// the sign pattern s of h_T turns the problem into a convex QP over a product
// of two simplices (w = |h_T| on the unit simplex, and the positive/negative
// parts of h_{T^c} plus a slack on another). Each QP is solved by FISTA with
// adaptive restart; the Frank-Wolfe gap gives a certified lower bound. Since
// h'Vh is even in h only half of the sign patterns are visited.
//
// The remaining factors are estimated by sampling cone directions and
// refining the best candidates by projected subgradient descent. Every
// evaluated point lies in the cone, so sampled values are upper bounds on the
// infimum and nothing more.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "sparse_drift/error.hpp"
#include "sparse_drift/model.hpp"
#include "sparse_drift/model_json.hpp"
#include "sparse_drift/parallel.hpp"
#include "sparse_drift/rng.hpp"

namespace sparse_drift {

enum class FactorKind { kKappa, kFq, kFinf, kRE };

inline std::string factor_name(FactorKind kind, double q = 2.0) {
  switch (kind) {
    case FactorKind::kKappa: return "kappa";
    case FactorKind::kFq: return "f" + std::to_string(static_cast<int>(q));
    case FactorKind::kFinf: return "finf";
    case FactorKind::kRE: return "re";
  }
  return "unknown";
}

enum class FactorMethod { kExactQp, kSampled };

struct ConeFactorReport {
  IndexSet support;
  FactorKind kind = FactorKind::kKappa;
  double q = 2.0;  // F_q only
  double value = 0.0;
  Vector certificate;  // h* in C_T
  FactorMethod method = FactorMethod::kExactQp;
  /// Exact mode: certified lower bound (value - lower_bound is the duality gap).
  double lower_bound = 0.0;
  /// Sampled mode: number of random directions and the improvement achieved
  /// by local descent over the best raw sample.
  std::size_t samples = 0;
  double descent_gain = 0.0;
  /// Exact mode: false when the solve stopped on KappaOptions::decide_at.
  bool converged = true;

  /// Sampled reports only bound the infimum from above.
  bool upper_bound_only() const { return method == FactorMethod::kSampled; }
};

namespace cone_detail {

inline IndexSet complement(const IndexSet& t, std::size_t p) {
  std::vector<char> in(p, 0);
  for (auto j : t) in[j] = 1;
  IndexSet out;
  for (std::size_t j = 0; j < p; ++j)
    if (!in[j]) out.push_back(j);
  return out;
}

inline void check_inputs(const Matrix& v, const IndexSet& t) {
  require(v.rows() == v.cols(), ErrorCode::kDimensionMismatch, "V must be square");
  require(!t.empty(), ErrorCode::kInvalidArgument, "target set T must be nonempty");
  IndexSet sorted = t;
  std::sort(sorted.begin(), sorted.end());
  require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), ErrorCode::kInvalidArgument,
          "target set T has duplicates");
  require(sorted.back() < static_cast<std::size_t>(v.rows()), ErrorCode::kInvalidArgument,
          "target set index out of range");
}

/// Euclidean projection of y onto {x >= 0, sum x = 1}.
inline void project_simplex(Eigen::Ref<Vector> y) {
  const Eigen::Index d = y.size();
  std::vector<double> u(y.data(), y.data() + d);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, tau = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) {
    cumsum += u[static_cast<std::size_t>(k)];
    const double t = (cumsum - 1.0) / static_cast<double>(k + 1);
    if (u[static_cast<std::size_t>(k)] - t > 0.0) tau = t;
  }
  for (Eigen::Index k = 0; k < d; ++k) y[k] = std::max(y[k] - tau, 0.0);
}

struct PatternSolve {
  double value = std::numeric_limits<double>::infinity();  // min h'Vh
  double lower = 0.0;
  Vector h;
  bool converged = false;
};

/// min h'Vh over h_T = s.w, w in simplex, h_Tc = y+ - y-, (y+, y-, slack) in simplex.
inline PatternSolve solve_pattern(const Matrix& v, const IndexSet& t, const IndexSet& tc,
                                  const std::vector<double>& sign, double lipschitz, std::size_t max_iter,
                                  double abs_tol, double rel_tol, double decide_at) {
  const auto s = static_cast<Eigen::Index>(t.size());
  const auto r = static_cast<Eigen::Index>(tc.size());
  const Eigen::Index dim = s + 2 * r + 1;
  const Eigen::Index p = v.rows();

  auto to_h = [&](const Vector& z) {
    Vector h = Vector::Zero(p);
    for (Eigen::Index k = 0; k < s; ++k) h[static_cast<Eigen::Index>(t[static_cast<std::size_t>(k)])] = sign[static_cast<std::size_t>(k)] * z[k];
    for (Eigen::Index k = 0; k < r; ++k) h[static_cast<Eigen::Index>(tc[static_cast<std::size_t>(k)])] = z[s + k] - z[s + r + k];
    return h;
  };
  auto grad_z = [&](const Vector& gh) {
    Vector g(dim);
    for (Eigen::Index k = 0; k < s; ++k) g[k] = sign[static_cast<std::size_t>(k)] * gh[static_cast<Eigen::Index>(t[static_cast<std::size_t>(k)])];
    for (Eigen::Index k = 0; k < r; ++k) {
      const double gk = gh[static_cast<Eigen::Index>(tc[static_cast<std::size_t>(k)])];
      g[s + k] = gk;
      g[s + r + k] = -gk;
    }
    g[dim - 1] = 0.0;
    return g;
  };
  auto project = [&](Vector& z) {
    project_simplex(z.head(s));
    project_simplex(z.tail(2 * r + 1));
  };

  Vector z = Vector::Zero(dim);
  z.head(s).setConstant(1.0 / static_cast<double>(s));
  z[dim - 1] = 1.0;
  Vector y = z, z_prev = z;
  double momentum = 1.0;
  const double step = 1.0 / lipschitz;

  PatternSolve best;
  double f_prev = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < max_iter; ++it) {
    // Gradient step from the extrapolated point.
    const Vector hy = to_h(y);
    Vector zn = y - step * grad_z(2.0 * (v * hy));
    project(zn);

    const Vector h = to_h(zn);
    const Vector vh = v * h;
    const double f = h.dot(vh);
    const Vector g = grad_z(2.0 * vh);
    // Frank-Wolfe gap over the product of simplices.
    const double lin_min = g.head(s).minCoeff() + std::min(g.tail(2 * r + 1).minCoeff(), 0.0);
    const double gap = std::max(g.dot(zn) - lin_min, 0.0);
    if (f < best.value) {
      best.value = f;
      best.h = h;
    }
    best.lower = std::max(best.lower, f - gap);
    if (gap <= abs_tol + rel_tol * std::max(f, 0.0)) {
      best.converged = true;
      break;
    }
    // Which side of decide_at the minimum lies on is already known.
    if (std::isfinite(decide_at) && (best.value <= decide_at || best.lower > decide_at)) break;

    if (f > f_prev) {
      momentum = 1.0;  // adaptive restart
      y = zn;
    } else {
      const double next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
      y = zn + ((momentum - 1.0) / next) * (zn - z_prev);
      momentum = next;
    }
    z_prev = zn;
    f_prev = f;
  }
  best.lower = std::min(std::max(best.lower, 0.0), best.value);
  return best;
}

}  // namespace cone_detail

struct KappaOptions {
  std::size_t max_support = 12;
  std::size_t max_iter = 200000;
  double abs_tol = 1e-14;
  double rel_tol = 1e-10;
  /// When set, stop as soon as it is known whether kappa^2 / S, the minimum
  /// of h'Vh, is <= decide_at; the value is then only an upper bound.
  double decide_at = -std::numeric_limits<double>::infinity();
};

/// Exact compatibility factor with a certificate h* (||h*_T||_1 = 1).
inline ConeFactorReport kappa(const Matrix& v, const IndexSet& t, const KappaOptions& opt = {}) {
  cone_detail::check_inputs(v, t);
  require(t.size() <= opt.max_support, ErrorCode::kInvalidArgument,
          "|T| = " + std::to_string(t.size()) + " exceeds the sign-pattern limit " +
              std::to_string(opt.max_support));
  const std::size_t p = static_cast<std::size_t>(v.rows());
  const IndexSet tc = cone_detail::complement(t, p);
  const double s = static_cast<double>(t.size());

  ConeFactorReport report;
  report.support = t;
  report.kind = FactorKind::kKappa;
  report.method = FactorMethod::kExactQp;

  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (v + v.transpose()), Eigen::EigenvaluesOnly);
  const double lambda_max = std::max(eig.eigenvalues().maxCoeff(), 0.0);
  if (lambda_max == 0.0) {
    Vector h = Vector::Zero(static_cast<Eigen::Index>(p));
    h[static_cast<Eigen::Index>(t.front())] = 1.0;
    report.certificate = h;
    report.value = 0.0;
    report.lower_bound = 0.0;
    return report;
  }
  const double lipschitz = 4.0 * lambda_max;

  double best = std::numeric_limits<double>::infinity();
  double lower = std::numeric_limits<double>::infinity();
  const std::size_t patterns = std::size_t{1} << (t.size() - 1);
  for (std::size_t mask = 0; mask < patterns; ++mask) {
    std::vector<double> sign(t.size(), 1.0);
    for (std::size_t k = 1; k < t.size(); ++k)
      if (mask & (std::size_t{1} << (k - 1))) sign[k] = -1.0;
    const auto sol =
        cone_detail::solve_pattern(v, t, tc, sign, lipschitz, opt.max_iter, opt.abs_tol, opt.rel_tol, opt.decide_at);
    if (sol.value < best) {
      best = sol.value;
      report.certificate = sol.h;
    }
    lower = std::min(lower, sol.lower);
    report.converged = report.converged && sol.converged;
    if (best <= opt.decide_at) {
      report.converged = false;
      lower = 0.0;  // remaining patterns were not visited
      break;
    }
  }
  const Vector& h = report.certificate;
  double ht = 0.0;
  for (auto j : t) ht += std::abs(h[static_cast<Eigen::Index>(j)]);
  report.value = std::sqrt(s) * std::sqrt(std::max(h.dot(v * h), 0.0)) / ht;
  report.lower_bound = std::sqrt(s * std::max(lower, 0.0));
  return report;
}

enum class BoundVerdict { kHolds, kViolated, kUndetermined };

inline const char* to_string(BoundVerdict v) {
  switch (v) {
    case BoundVerdict::kHolds: return "holds";
    case BoundVerdict::kViolated: return "violated";
    case BoundVerdict::kUndetermined: return "undetermined";
  }
  return "unknown";
}

struct L1BoundCheck {
  BoundVerdict verdict = BoundVerdict::kUndetermined;
  double kappa_upper = 0.0;
  double kappa_lower = 0.0;
  double bound = 0.0;  // 8 S* gamma / kappa_upper^2, never above the true bound
};

/// Checks ||h||_1 <= 8 s_star gamma / kappa(T, V)^2 without computing kappa
/// to full accuracy: an upper bound on kappa that satisfies the inequality
/// settles it, as does a lower bound that violates it.
inline L1BoundCheck check_l1_bound(const Matrix& v, const IndexSet& t, double err_l1, double s_star, double gamma,
                                   KappaOptions opt = {}) {
  require(err_l1 >= 0.0 && s_star > 0.0 && gamma > 0.0, ErrorCode::kInvalidArgument, "invalid l1 bound inputs");
  const double s = static_cast<double>(t.size());
  L1BoundCheck out;
  // ||h||_1 <= 8 S* gamma / (S f)  <=>  f <= 8 S* gamma / (S ||h||_1)
  opt.decide_at = err_l1 > 0.0 ? 8.0 * s_star * gamma / (s * err_l1) : std::numeric_limits<double>::infinity();
  const auto r = kappa(v, t, opt);
  out.kappa_upper = r.value;
  out.kappa_lower = r.lower_bound;
  out.bound = r.value > 0.0 ? 8.0 * s_star * gamma / (r.value * r.value) : std::numeric_limits<double>::infinity();
  if (err_l1 <= out.bound)
    out.verdict = BoundVerdict::kHolds;
  else if (r.lower_bound > 0.0 && err_l1 > 8.0 * s_star * gamma / (r.lower_bound * r.lower_bound))
    out.verdict = BoundVerdict::kViolated;
  return out;
}

// ---------------------------------------------------------------------------
// Sampled factors

/// The defining ratio of a factor at h (h must be nonzero).
inline double factor_ratio(FactorKind kind, double q, const Matrix& v, const IndexSet& t, const Vector& h) {
  const double quad = std::max(h.dot(v * h), 0.0);
  const double s = static_cast<double>(t.size());
  double ht = 0.0;
  for (auto j : t) ht += std::abs(h[static_cast<Eigen::Index>(j)]);
  switch (kind) {
    case FactorKind::kKappa: return std::sqrt(s) * std::sqrt(quad) / ht;
    case FactorKind::kFq: {
      const double hq = std::pow(h.array().abs().pow(q).sum(), 1.0 / q);
      return std::pow(s, 1.0 / q) * quad / (ht * hq);
    }
    case FactorKind::kFinf: return std::sqrt(quad) / h.lpNorm<Eigen::Infinity>();
    case FactorKind::kRE: return std::sqrt(quad) / h.norm();
  }
  return 0.0;
}

inline bool in_cone(const Vector& h, const IndexSet& t, double tol = 1e-12) {
  double total = h.lpNorm<1>(), ht = 0.0;
  for (auto j : t) ht += std::abs(h[static_cast<Eigen::Index>(j)]);
  return total - ht <= ht + tol;
}

struct SamplerOptions {
  std::size_t budget = 100000;
  std::size_t refine_candidates = 32;
  std::size_t descent_iters = 500;
  std::uint64_t seed = 0;
  std::size_t chunk = 4096;
  std::size_t workers = 1;
};

namespace cone_detail {

/// Scales h_{T^c} down so that h lies in C_T.
inline void retract(Vector& h, const IndexSet& t, const std::vector<char>& in_t) {
  double ht = 0.0, hc = 0.0;
  for (Eigen::Index j = 0; j < h.size(); ++j) (in_t[static_cast<std::size_t>(j)] ? ht : hc) += std::abs(h[j]);
  if (hc > ht && hc > 0.0) {
    const double f = ht / hc;
    for (Eigen::Index j = 0; j < h.size(); ++j)
      if (!in_t[static_cast<std::size_t>(j)]) h[j] *= f;
  }
  (void)t;
}

/// Gradient of log(ratio); degree-zero homogeneity makes it orthogonal to h.
inline Vector log_ratio_gradient(FactorKind kind, double q, const Matrix& v, const IndexSet& t, const Vector& h) {
  const Vector vh = v * h;
  const double quad = h.dot(vh);
  Vector g = Vector::Zero(h.size());
  if (quad <= 0.0) return g;
  double ht = 0.0;
  for (auto j : t) ht += std::abs(h[static_cast<Eigen::Index>(j)]);
  auto sgn = [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); };
  switch (kind) {
    case FactorKind::kKappa:
      g = vh / quad;
      for (auto j : t) g[static_cast<Eigen::Index>(j)] -= sgn(h[static_cast<Eigen::Index>(j)]) / ht;
      break;
    case FactorKind::kRE:
      g = vh / quad - h / h.squaredNorm();
      break;
    case FactorKind::kFq: {
      g = 2.0 * vh / quad;
      for (auto j : t) g[static_cast<Eigen::Index>(j)] -= sgn(h[static_cast<Eigen::Index>(j)]) / ht;
      const double normq = h.array().abs().pow(q).sum();
      for (Eigen::Index j = 0; j < h.size(); ++j)
        g[j] -= sgn(h[j]) * std::pow(std::abs(h[j]), q - 1.0) / normq;
      break;
    }
    case FactorKind::kFinf: {
      Eigen::Index m = 0;
      h.cwiseAbs().maxCoeff(&m);
      g = vh / quad;
      g[m] -= sgn(h[m]) / std::abs(h[m]);
      break;
    }
  }
  return g;
}

struct Candidate {
  double value;
  Vector h;
};

inline bool candidate_less(const Candidate& a, const Candidate& b) {
  if (a.value != b.value) return a.value < b.value;
  return std::lexicographical_compare(a.h.data(), a.h.data() + a.h.size(), b.h.data(), b.h.data() + b.h.size());
}

}  // namespace cone_detail

/// Sampled upper bound for any factor kind. Deterministic in opt.seed and
/// independent of opt.workers.
inline ConeFactorReport sampled_factor(const Matrix& v, const IndexSet& t, FactorKind kind, double q,
                                       const SamplerOptions& opt = {}) {
  cone_detail::check_inputs(v, t);
  require(opt.budget > 0, ErrorCode::kInvalidArgument, "sampling budget must be positive");
  if (kind == FactorKind::kFq)
    require(q >= 1.0 && std::isfinite(q), ErrorCode::kInvalidArgument, "F_q needs q in [1, inf)");
  const Eigen::Index p = v.rows();
  std::vector<char> in_t(static_cast<std::size_t>(p), 0);
  for (auto j : t) in_t[j] = 1;
  const IndexSet tc = cone_detail::complement(t, static_cast<std::size_t>(p));
  const std::size_t keep = std::max<std::size_t>(1, opt.refine_candidates);

  const std::size_t chunks = (opt.budget + opt.chunk - 1) / opt.chunk;
  std::vector<std::vector<cone_detail::Candidate>> per_chunk(chunks);
  parallel_for(chunks, opt.workers, [&](std::size_t c) {
    RandomStream rng(opt.seed, static_cast<std::uint64_t>(Stream::kFactorSampling) + (std::uint64_t{c} << 8));
    const std::size_t begin = c * opt.chunk;
    const std::size_t end = std::min(opt.budget, begin + opt.chunk);
    auto& best = per_chunk[c];
    for (std::size_t k = begin; k < end; ++k) {
      Vector h = Vector::Zero(p);
      const std::uint64_t shape = rng.below(4);
      if (shape == 0) {
        h[static_cast<Eigen::Index>(t[rng.below(t.size())])] = rng.normal() >= 0 ? 1.0 : -1.0;
      } else {
        for (auto j : t) h[static_cast<Eigen::Index>(j)] = rng.normal();
      }
      if (shape >= 2 && !tc.empty()) {
        double ht = 0.0;
        for (auto j : t) ht += std::abs(h[static_cast<Eigen::Index>(j)]);
        Vector dir(static_cast<Eigen::Index>(tc.size()));
        for (Eigen::Index m = 0; m < dir.size(); ++m) dir[m] = rng.normal();
        // Sparse directions are drawn as often as dense ones.
        if (shape == 3) {
          const auto keep_one = static_cast<Eigen::Index>(rng.below(tc.size()));
          for (Eigen::Index m = 0; m < dir.size(); ++m)
            if (m != keep_one) dir[m] = 0.0;
        }
        const double l1 = dir.lpNorm<1>();
        // Minimizers typically sit on the cone boundary; half the draws go there.
        const double radius = rng.below(2) == 0 ? ht : ht * rng.uniform();
        if (l1 > 0.0)
          for (Eigen::Index m = 0; m < dir.size(); ++m)
            h[static_cast<Eigen::Index>(tc[static_cast<std::size_t>(m)])] = dir[m] / l1 * radius;
      }
      if (h.squaredNorm() == 0.0) continue;
      h.normalize();
      cone_detail::Candidate cand{factor_ratio(kind, q, v, t, h), h};
      if (best.size() < keep || cone_detail::candidate_less(cand, best.back())) {
        best.insert(std::upper_bound(best.begin(), best.end(), cand, cone_detail::candidate_less), cand);
        if (best.size() > keep) best.pop_back();
      }
    }
  });

  std::vector<cone_detail::Candidate> pool;
  for (auto& chunk : per_chunk) pool.insert(pool.end(), chunk.begin(), chunk.end());
  std::sort(pool.begin(), pool.end(), cone_detail::candidate_less);
  if (pool.size() > keep) pool.resize(keep);
  require(!pool.empty(), ErrorCode::kInvalidArgument, "sampler produced no valid directions");

  const double raw_best = pool.front().value;
  cone_detail::Candidate best = pool.front();
  for (const auto& start : pool) {
    // Normalized subgradient steps of length scale / k; the scale is halved
    // whenever a step fails to decrease the ratio, so the iterate is monotone.
    cone_detail::Candidate cur = start;
    double scale = 1.0;
    for (std::size_t it = 1; it <= opt.descent_iters; ++it) {
      const Vector g = cone_detail::log_ratio_gradient(kind, q, v, t, cur.h);
      const double gn = g.norm();
      if (!(gn > 0.0) || !std::isfinite(gn)) break;
      Vector h = cur.h - (scale / static_cast<double>(it)) * (g / gn);
      cone_detail::retract(h, t, in_t);
      const double nrm = h.norm();
      double ht = 0.0;
      for (auto j : t) ht += std::abs(h[static_cast<Eigen::Index>(j)]);
      const double value = (nrm > 0.0 && ht > 0.0) ? factor_ratio(kind, q, v, t, h / nrm)
                                                   : std::numeric_limits<double>::infinity();
      if (std::isfinite(value) && value < cur.value) {
        cur = {value, h / nrm};
      } else {
        scale *= 0.5;
        if (scale < 1e-12) break;
      }
    }
    if (cone_detail::candidate_less(cur, best)) best = cur;
  }

  ConeFactorReport report;
  report.support = t;
  report.kind = kind;
  report.q = q;
  report.value = best.value;
  report.certificate = best.h;
  report.method = FactorMethod::kSampled;
  report.samples = opt.budget;
  report.descent_gain = raw_best - best.value;
  return report;
}

inline ConeFactorReport re_factor(const Matrix& v, const IndexSet& t, const SamplerOptions& opt = {}) {
  return sampled_factor(v, t, FactorKind::kRE, 2.0, opt);
}

/// F_q for finite q >= 1; q = infinity selects F_inf.
inline ConeFactorReport f_q_factor(const Matrix& v, const IndexSet& t, double q, const SamplerOptions& opt = {}) {
  if (std::isinf(q)) return sampled_factor(v, t, FactorKind::kFinf, q, opt);
  return sampled_factor(v, t, FactorKind::kFq, q, opt);
}

inline Json to_json(const ConeFactorReport& r) {
  Json out{{"kind", factor_name(r.kind, r.q)},
           {"support", r.support},
           {"value", r.value},
           {"method", r.method == FactorMethod::kExactQp ? "exact" : "sampled"},
           {"upper_bound_only", r.upper_bound_only()},
           {"certificate", vector_to_json(r.certificate)}};
  if (r.method == FactorMethod::kExactQp) {
    out["lower_bound"] = r.lower_bound;
    out["converged"] = r.converged;
  } else {
    out["samples"] = r.samples;
    out["descent_gain"] = r.descent_gain;
  }
  return out;
}

}  // namespace sparse_drift
