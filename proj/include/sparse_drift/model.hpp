#pragma once

// Model description for dX_t^i = sum_j Theta_ij phi_j(X_t^j) dt + sigma_i dW_t^i,
// observed on an equidistant grid t_k = k * delta.
//
// Indices are 0-based throughout the library and in every file format.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "sparse_drift/error.hpp"

namespace sparse_drift {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexSet = std::vector<std::size_t>;

// ---------------------------------------------------------------------------
// Link functions

enum class PhiKind {
  kTanh,      // gain * tanh(x / scale)
  kRational,  // gain * u / (1 + u^2), u = x / scale
  kSine,      // gain * sin(x / scale)
  kClip,      // gain * clamp(x / scale, -1, 1)
  kIdentity,  // gain * x / scale; unbounded, needs the unbounded-link flag
};

inline const char* to_string(PhiKind kind) {
  switch (kind) {
    case PhiKind::kTanh: return "tanh";
    case PhiKind::kRational: return "rational";
    case PhiKind::kSine: return "sine";
    case PhiKind::kClip: return "clip";
    case PhiKind::kIdentity: return "identity";
  }
  return "unknown";
}

inline PhiKind phi_kind_from_string(const std::string& name) {
  if (name == "tanh") return PhiKind::kTanh;
  if (name == "rational") return PhiKind::kRational;
  if (name == "sine") return PhiKind::kSine;
  if (name == "clip") return PhiKind::kClip;
  if (name == "identity") return PhiKind::kIdentity;
  throw Error(ErrorCode::kInvalidArgument, "unknown phi kind '" + name + "'");
}

struct PhiComponent {
  PhiKind kind = PhiKind::kTanh;
  double scale = 1.0;
  double gain = 1.0;

  double operator()(double x) const {
    const double u = x / scale;
    switch (kind) {
      case PhiKind::kTanh: return gain * std::tanh(u);
      case PhiKind::kRational: return gain * u / (1.0 + u * u);
      case PhiKind::kSine: return gain * std::sin(u);
      case PhiKind::kClip: return gain * std::clamp(u, -1.0, 1.0);
      case PhiKind::kIdentity: return gain * u;
    }
    return 0.0;
  }

  /// sup_x |phi(x)|, exact for each kind.
  double bound() const {
    const double g = std::abs(gain);
    switch (kind) {
      case PhiKind::kRational: return 0.5 * g;
      case PhiKind::kIdentity: return std::numeric_limits<double>::infinity();
      default: return g;
    }
  }

  /// Smallest global Lipschitz constant; every kind has slope <= 1 at unit scale.
  double lipschitz() const { return std::abs(gain) / scale; }

  bool bounded() const { return kind != PhiKind::kIdentity; }

  friend bool operator==(const PhiComponent&, const PhiComponent&) = default;
};

/// Componentwise link phi(x) = (phi_1(x_1), ..., phi_p(x_p)) with declared
/// constants L (bound) and L' (Lipschitz).
class PhiBasis {
 public:
  PhiBasis() = default;

  PhiBasis(std::size_t p, PhiComponent shared, std::optional<double> declared_bound = {},
           std::optional<double> declared_lipschitz = {})
      : PhiBasis(std::vector<PhiComponent>(p, shared), declared_bound, declared_lipschitz) {}

  explicit PhiBasis(std::vector<PhiComponent> components,
                    std::optional<double> declared_bound = {},
                    std::optional<double> declared_lipschitz = {})
      : components_(std::move(components)) {
    for (const auto& c : components_) {
      require(std::isfinite(c.scale) && c.scale > 0.0, ErrorCode::kInvalidArgument,
              "phi scale must be positive and finite");
      require(std::isfinite(c.gain), ErrorCode::kInvalidArgument, "phi gain must be finite");
    }
    bound_ = declared_bound.value_or(actual_bound());
    lipschitz_ = declared_lipschitz.value_or(actual_lipschitz());
  }

  std::size_t dimension() const { return components_.size(); }
  const PhiComponent& component(std::size_t j) const { return components_[j]; }
  const std::vector<PhiComponent>& components() const { return components_; }

  double declared_bound() const { return bound_; }
  double declared_lipschitz() const { return lipschitz_; }

  double actual_bound() const {
    double b = 0.0;
    for (const auto& c : components_) b = std::max(b, c.bound());
    return b;
  }

  double actual_lipschitz() const {
    double l = 0.0;
    for (const auto& c : components_) l = std::max(l, c.lipschitz());
    return l;
  }

  bool bounded() const {
    return std::all_of(components_.begin(), components_.end(),
                       [](const PhiComponent& c) { return c.bounded(); });
  }

  double operator()(std::size_t j, double x) const { return components_[j](x); }

  /// Writes phi(x) into out; both spans must have length p.
  void eval_into(std::span<const double> x, std::span<double> out) const {
    require(x.size() == components_.size() && out.size() == components_.size(),
            ErrorCode::kDimensionMismatch, "eval_phi: state length does not match p");
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = components_[j](x[j]);
  }

  friend bool operator==(const PhiBasis&, const PhiBasis&) = default;

 private:
  std::vector<PhiComponent> components_;
  double bound_ = 0.0;
  double lipschitz_ = 0.0;
};

inline Vector eval_phi(const PhiBasis& basis, std::span<const double> x) {
  Vector out(static_cast<Eigen::Index>(x.size()));
  basis.eval_into(x, std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
  return out;
}

inline Vector eval_phi(const PhiBasis& basis, const Vector& x) {
  return eval_phi(basis, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
}

// ---------------------------------------------------------------------------
// Sparse drift matrix, stored row-major as sorted (column, value) lists.

struct DriftEntry {
  std::size_t col;
  double value;
  friend bool operator==(const DriftEntry&, const DriftEntry&) = default;
};

using SparseRow = std::vector<DriftEntry>;

struct Triple {
  std::size_t row;
  std::size_t col;
  double value;
  friend bool operator==(const Triple&, const Triple&) = default;
};

class SparseDrift {
 public:
  SparseDrift() = default;
  explicit SparseDrift(std::size_t p) : rows_(p) {}

  /// Explicit zeros are dropped; duplicates and out-of-range indices throw.
  static SparseDrift from_triples(std::size_t p, std::span<const Triple> triples) {
    SparseDrift out(p);
    for (const auto& t : triples) {
      require(t.row < p && t.col < p, ErrorCode::kInvalidArgument,
              "drift entry (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                  ") out of range");
      require(std::isfinite(t.value), ErrorCode::kInvalidArgument, "drift entry not finite");
      if (t.value != 0.0) out.rows_[t.row].push_back({t.col, t.value});
    }
    for (auto& row : out.rows_) {
      std::sort(row.begin(), row.end(),
                [](const DriftEntry& a, const DriftEntry& b) { return a.col < b.col; });
      for (std::size_t k = 1; k < row.size(); ++k)
        require(row[k].col != row[k - 1].col, ErrorCode::kInvalidArgument,
                "duplicate drift entry in column " + std::to_string(row[k].col));
    }
    return out;
  }

  static SparseDrift from_dense(const Matrix& dense) {
    std::vector<Triple> triples;
    for (Eigen::Index i = 0; i < dense.rows(); ++i)
      for (Eigen::Index j = 0; j < dense.cols(); ++j)
        if (dense(i, j) != 0.0)
          triples.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), dense(i, j)});
    return from_triples(static_cast<std::size_t>(dense.rows()), triples);
  }

  std::size_t dimension() const { return rows_.size(); }
  const SparseRow& row(std::size_t i) const { return rows_[i]; }

  std::size_t nonzeros() const {
    std::size_t n = 0;
    for (const auto& r : rows_) n += r.size();
    return n;
  }

  std::size_t max_row_support() const {
    std::size_t s = 0;
    for (const auto& r : rows_) s = std::max(s, r.size());
    return s;
  }

  IndexSet support(std::size_t i) const {
    IndexSet out;
    out.reserve(rows_[i].size());
    for (const auto& e : rows_[i]) out.push_back(e.col);
    return out;
  }

  Vector dense_row(std::size_t i) const {
    Vector out = Vector::Zero(static_cast<Eigen::Index>(rows_.size()));
    for (const auto& e : rows_[i]) out[static_cast<Eigen::Index>(e.col)] = e.value;
    return out;
  }

  Matrix dense() const {
    const auto p = static_cast<Eigen::Index>(rows_.size());
    Matrix out = Matrix::Zero(p, p);
    for (std::size_t i = 0; i < rows_.size(); ++i)
      for (const auto& e : rows_[i]) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(e.col)) = e.value;
    return out;
  }

  double row_l1(std::size_t i) const {
    double s = 0.0;
    for (const auto& e : rows_[i]) s += std::abs(e.value);
    return s;
  }

  std::vector<Triple> triples() const {
    std::vector<Triple> out;
    for (std::size_t i = 0; i < rows_.size(); ++i)
      for (const auto& e : rows_[i]) out.push_back({i, e.col, e.value});
    return out;
  }

  friend bool operator==(const SparseDrift&, const SparseDrift&) = default;

 private:
  std::vector<SparseRow> rows_;
};

// ---------------------------------------------------------------------------

struct InitialLaw {
  enum class Kind { kPoint, kGaussian };
  Kind kind = Kind::kPoint;
  Vector mean;  // point location, or Gaussian mean
  Vector sd;    // Gaussian only; empty for point mass

  static InitialLaw point(Vector location) { return {Kind::kPoint, std::move(location), Vector()}; }
  static InitialLaw gaussian(Vector mean, Vector sd) {
    return {Kind::kGaussian, std::move(mean), std::move(sd)};
  }

  friend bool operator==(const InitialLaw& a, const InitialLaw& b) {
    return a.kind == b.kind && a.mean == b.mean && a.sd == b.sd;
  }
};

/// Bounds K1..K4 used when checking the true parameters.
struct ValidationConstants {
  double theta_upper = 10.0;   // K1
  double theta_lower = 0.1;    // K2
  double sigma_upper = 5.0;    // K3
  double sigma_lower = 0.05;   // K4
  friend bool operator==(const ValidationConstants&, const ValidationConstants&) = default;
};

/// Ground-truth model. Construction checks shapes only; parameter ranges are
/// reported by validate_model so that invalid models can still be inspected.
class ModelSpec {
 public:
  ModelSpec(SparseDrift theta, Vector sigma, PhiBasis phi, InitialLaw init, std::size_t s_star,
            ValidationConstants constants = {}, bool unbounded_link = false)
      : theta_(std::move(theta)),
        sigma_(std::move(sigma)),
        phi_(std::move(phi)),
        init_(std::move(init)),
        s_star_(s_star),
        constants_(constants),
        unbounded_link_(unbounded_link) {
    const std::size_t p = theta_.dimension();
    require(p > 0, ErrorCode::kInvalidArgument, "model dimension must be positive");
    require(static_cast<std::size_t>(sigma_.size()) == p, ErrorCode::kDimensionMismatch,
            "sigma length does not match p");
    require(phi_.dimension() == p, ErrorCode::kDimensionMismatch, "phi basis length does not match p");
    require(static_cast<std::size_t>(init_.mean.size()) == p, ErrorCode::kDimensionMismatch,
            "initial law length does not match p");
    if (init_.kind == InitialLaw::Kind::kGaussian)
      require(static_cast<std::size_t>(init_.sd.size()) == p && (init_.sd.array() >= 0.0).all(),
              ErrorCode::kInvalidArgument, "initial sd must have length p and be non-negative");
    require(sigma_.allFinite() && (sigma_.array() >= 0.0).all(), ErrorCode::kInvalidArgument,
            "sigma must be finite and non-negative");
    require(phi_.bounded() || unbounded_link_, ErrorCode::kInvalidArgument,
            "unbounded link function requires the unbounded_link flag");
  }

  std::size_t dimension() const { return theta_.dimension(); }
  const SparseDrift& theta() const { return theta_; }
  const Vector& sigma() const { return sigma_; }
  const PhiBasis& phi() const { return phi_; }
  const InitialLaw& init() const { return init_; }
  std::size_t s_star() const { return s_star_; }
  const ValidationConstants& constants() const { return constants_; }
  bool unbounded_link() const { return unbounded_link_; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;

 private:
  SparseDrift theta_;
  Vector sigma_;
  PhiBasis phi_;
  InitialLaw init_;
  std::size_t s_star_;
  ValidationConstants constants_;
  bool unbounded_link_;
};

// ---------------------------------------------------------------------------

class SamplingGrid {
 public:
  SamplingGrid(std::size_t n, double delta, std::optional<double> alpha = {})
      : n_(n), delta_(delta), alpha_(alpha) {
    require(n_ >= 1, ErrorCode::kInvalidArgument, "grid needs at least one increment");
    require(std::isfinite(delta_) && delta_ > 0.0, ErrorCode::kInvalidArgument,
            "grid step must be positive and finite");
  }

  /// delta = n^(-alpha).
  static SamplingGrid from_alpha(std::size_t n, double alpha) {
    return SamplingGrid(n, std::pow(static_cast<double>(n), -alpha), alpha);
  }

  std::size_t n() const { return n_; }
  double delta() const { return delta_; }
  std::optional<double> alpha() const { return alpha_; }
  double horizon() const { return static_cast<double>(n_) * delta_; }
  double time(std::size_t k) const { return static_cast<double>(k) * delta_; }

  friend bool operator==(const SamplingGrid&, const SamplingGrid&) = default;

 private:
  std::size_t n_;
  double delta_;
  std::optional<double> alpha_;
};

/// Observations X_{t_k}, k = 0..n, one row per time point.
struct PathData {
  PathData(SamplingGrid grid_, RowMatrix values_, std::uint64_t seed_ = 0,
           std::uint64_t model_fingerprint_ = 0)
      : grid(grid_), values(std::move(values_)), seed(seed_), model_fingerprint(model_fingerprint_) {
    require(static_cast<std::size_t>(values.rows()) == grid.n() + 1, ErrorCode::kDimensionMismatch,
            "path has " + std::to_string(values.rows()) + " rows, expected n+1 = " +
                std::to_string(grid.n() + 1));
    require(values.cols() > 0, ErrorCode::kDimensionMismatch, "path has no coordinates");
    require(values.allFinite(), ErrorCode::kNonFiniteState, "path contains non-finite values");
  }

  std::size_t dimension() const { return static_cast<std::size_t>(values.cols()); }

  SamplingGrid grid;
  RowMatrix values;
  std::uint64_t seed;
  std::uint64_t model_fingerprint;
};

// ---------------------------------------------------------------------------
// Configuration-level checks of the regularity assumptions.

enum class ClauseStatus { kPass, kFail, kNotCheckable, kAssumed };

inline const char* to_string(ClauseStatus s) {
  switch (s) {
    case ClauseStatus::kPass: return "pass";
    case ClauseStatus::kFail: return "fail";
    case ClauseStatus::kNotCheckable: return "not-checkable";
    case ClauseStatus::kAssumed: return "assumed, enforced by burn-in";
  }
  return "unknown";
}

struct ClauseResult {
  std::string clause;  // "i".."v", or "sparsity"
  ClauseStatus status;
  std::string detail;
};

struct ValidationReport {
  std::vector<ClauseResult> clauses;

  bool has_hard_failure() const {
    return std::any_of(clauses.begin(), clauses.end(),
                       [](const ClauseResult& c) { return c.status == ClauseStatus::kFail; });
  }

  const ClauseResult* find(const std::string& clause) const {
    for (const auto& c : clauses)
      if (c.clause == clause) return &c;
    return nullptr;
  }
};

inline ValidationReport validate_model(const ModelSpec& spec, const SamplingGrid& grid) {
  ValidationReport report;
  const auto& k = spec.constants();

  // (i) observation scheme
  if (auto alpha = grid.alpha()) {
    const bool ok = *alpha > 0.5 && *alpha < 1.0;
    report.clauses.push_back({"i", ok ? ClauseStatus::kPass : ClauseStatus::kFail,
                              ok ? "alpha in (1/2, 1)"
                                 : "alpha = " + std::to_string(*alpha) + " not in (1/2, 1)"});
  } else {
    report.clauses.push_back({"i", ClauseStatus::kNotCheckable,
                              "grid has no alpha exponent; rate conditions are asymptotic"});
  }

  // (ii) bounded, Lipschitz link functions
  {
    const auto& phi = spec.phi();
    std::string detail;
    bool ok = true;
    if (!phi.bounded()) {
      ok = false;
      detail = "unbounded link (identity) violates sup|phi| <= L";
    } else if (!(phi.declared_bound() >= phi.actual_bound())) {
      ok = false;
      detail = "declared L below actual sup|phi|";
    } else if (!(phi.declared_lipschitz() >= phi.actual_lipschitz())) {
      ok = false;
      detail = "declared L' below actual Lipschitz constant";
    } else {
      detail = "sup|phi| <= L and |phi(x)-phi(y)| <= L'|x-y|";
    }
    report.clauses.push_back({"ii", ok ? ClauseStatus::kPass : ClauseStatus::kFail, detail});
  }

  report.clauses.push_back({"iii", ClauseStatus::kAssumed, "uniform moment bound"});

  // (iv) parameter ranges
  {
    std::string detail;
    bool ok = true;
    for (std::size_t i = 0; i < spec.dimension() && ok; ++i) {
      for (const auto& e : spec.theta().row(i)) {
        const double a = std::abs(e.value);
        if (!(a > k.theta_lower && a < k.theta_upper)) {
          ok = false;
          detail = "K2 < |Theta_ij| < K1 violated at (" + std::to_string(i) + "," +
                   std::to_string(e.col) + ")";
          break;
        }
      }
    }
    for (std::size_t i = 0; i < spec.dimension() && ok; ++i) {
      const double s = std::abs(spec.sigma()[static_cast<Eigen::Index>(i)]);
      if (!(s > k.sigma_lower && s < k.sigma_upper)) {
        ok = false;
        detail = "K4 < inf |sigma_i| violated or sigma_i >= K3 at i = " + std::to_string(i);
      }
    }
    if (ok) detail = "Theta and sigma within (K2, K1) and (K4, K3)";
    report.clauses.push_back({"iv", ok ? ClauseStatus::kPass : ClauseStatus::kFail, detail});
  }

  report.clauses.push_back({"v", ClauseStatus::kAssumed, "ergodicity of the true process"});

  {
    const std::size_t s = spec.theta().max_row_support();
    const bool ok = s <= spec.s_star();
    report.clauses.push_back({"sparsity", ok ? ClauseStatus::kPass : ClauseStatus::kFail,
                              "max row support " + std::to_string(s) + ", S* = " +
                                  std::to_string(spec.s_star())});
  }
  return report;
}

}  // namespace sparse_drift
