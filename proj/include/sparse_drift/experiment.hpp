#pragma once

// Monte Carlo driver. A configuration names a model template, a grid rule
// (n list, alpha), a sweep of tuning constants c0 and a replication count.
// Replication r at sample size n uses seed base_seed + r; everything it
// computes is stored in a ReplicationRecord, and the report is a pure fold
// of the records sorted by (n, r), so any record can be recomputed in
// isolation and the aggregates do not depend on scheduling.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sparse_drift/cone_factors.hpp"
#include "sparse_drift/dantzig.hpp"
#include "sparse_drift/error.hpp"
#include "sparse_drift/model.hpp"
#include "sparse_drift/model_json.hpp"
#include "sparse_drift/normality.hpp"
#include "sparse_drift/parallel.hpp"
#include "sparse_drift/qlik.hpp"
#include "sparse_drift/rng.hpp"
#include "sparse_drift/select_refit.hpp"
#include "sparse_drift/simulate.hpp"

namespace sparse_drift {

// ---------------------------------------------------------------------------
// Model templates

/// "ring": Theta = -signal * I plus (s_star - 1) / 2 antisymmetric rings over
/// random permutations of the coordinates, each contributing +-signal at
/// (a, b) and the opposite sign at (b, a). With a common link the symmetric
/// part of the drift is -signal * phi(x), which keeps the process ergodic.
/// Every row has exactly s_star nonzeros of magnitude `signal`.
/// "zero": Theta = 0.
struct ModelTemplate {
  std::string structure = "ring";
  std::size_t p = 100;
  std::size_t s_star = 3;
  double signal = 1.0;
  double sigma = 0.5;
  PhiComponent phi{PhiKind::kTanh, 0.05, 2.0};
  std::uint64_t model_seed = 1;

  void check() const {
    require(p >= 1, ErrorCode::kInvalidArgument, "template p must be >= 1");
    require(structure == "ring" || structure == "zero", ErrorCode::kInvalidArgument,
            "template structure must be 'ring' or 'zero'");
    if (structure == "ring") {
      require(s_star % 2 == 1, ErrorCode::kInvalidArgument, "ring template needs odd s_star");
      require(s_star == 1 || p >= s_star + 1, ErrorCode::kInvalidArgument, "ring template needs p > s_star");
    }
    require(std::isfinite(signal) && std::isfinite(sigma) && sigma >= 0.0, ErrorCode::kInvalidArgument,
            "template signal and sigma must be finite, sigma >= 0");
  }
};

inline ModelSpec build_model(const ModelTemplate& t) {
  t.check();
  const std::size_t p = t.p;
  std::vector<Triple> triples;
  if (t.structure == "ring") {
    std::vector<std::vector<char>> used(p, std::vector<char>(p, 0));
    for (std::size_t i = 0; i < p; ++i) {
      triples.push_back({i, i, -t.signal});
      used[i][i] = 1;
    }
    RandomStream rng(t.model_seed, Stream::kModelStructure);
    const std::size_t rings = (t.s_star - 1) / 2;
    for (std::size_t ring = 0; ring < rings; ++ring) {
      for (int attempt = 0;; ++attempt) {
        require(attempt < 10000, ErrorCode::kInvalidArgument, "could not place ring without collisions");
        std::vector<std::size_t> perm(p);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t k = p - 1; k > 0; --k) std::swap(perm[k], perm[rng.below(k + 1)]);
        bool clash = false;
        for (std::size_t k = 0; k < p && !clash; ++k) clash = used[perm[k]][perm[(k + 1) % p]] != 0;
        if (clash) continue;
        for (std::size_t k = 0; k < p; ++k) {
          const std::size_t a = perm[k], b = perm[(k + 1) % p];
          const double sign = rng.below(2) == 0 ? 1.0 : -1.0;
          triples.push_back({a, b, sign * t.signal});
          triples.push_back({b, a, -sign * t.signal});
          used[a][b] = used[b][a] = 1;
        }
        break;
      }
    }
  }
  const std::size_t s_star = t.structure == "ring" ? t.s_star : 0;
  return ModelSpec(SparseDrift::from_triples(p, triples), Vector::Constant(static_cast<Eigen::Index>(p), t.sigma),
                   PhiBasis(p, t.phi), InitialLaw::point(Vector::Zero(static_cast<Eigen::Index>(p))), s_star);
}

// ---------------------------------------------------------------------------
// Configuration

struct Stages {
  bool sigma = true;
  bool dantzig = true;
  bool select = true;
  bool refit = true;
  bool factors = false;

  void check() const {
    require(!select || dantzig, ErrorCode::kInvalidArgument, "stage 'select' needs 'dantzig'");
    require(!refit || select, ErrorCode::kInvalidArgument, "stage 'refit' needs 'select'");
    require(!factors || dantzig, ErrorCode::kInvalidArgument, "stage 'factors' needs 'dantzig'");
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    if (sigma) out.push_back("sigma");
    if (dantzig) out.push_back("dantzig");
    if (select) out.push_back("select");
    if (refit) out.push_back("refit");
    if (factors) out.push_back("factors");
    return out;
  }
};

struct ExperimentConfig {
  std::string name = "desk";
  ModelTemplate model;
  std::vector<std::size_t> n_list{1000, 4000, 16000};
  double alpha = 0.6;
  std::vector<double> c0_list{0.25, 0.5, 1.0, 2.0};
  std::size_t replications = 50;
  std::uint64_t base_seed = 1;
  std::string out_dir;
  Stages stages;
  std::size_t substeps = 8;
  double burn_in = 10.0;
  PivotRule pivot_rule = PivotRule::kLargestInfeasibility;
  std::size_t normality_row = 0;
  double ci_level = 0.95;
  bool kappa_check = true;
  std::size_t factor_budget = 2000;
  double failure_threshold = 0.05;

  void check() const {
    model.check();
    stages.check();
    require(replications >= 1, ErrorCode::kInvalidArgument, "replications must be >= 1");
    require(!n_list.empty(), ErrorCode::kInvalidArgument, "n list must be nonempty");
    require(std::isfinite(alpha) && alpha > 0.0, ErrorCode::kInvalidArgument, "alpha must be > 0");
    for (auto n : n_list) SamplingGrid::from_alpha(n, alpha);
    require(!stages.dantzig || !c0_list.empty(), ErrorCode::kInvalidArgument, "c0 list must be nonempty");
    for (double c0 : c0_list) require(std::isfinite(c0) && c0 > 0.0, ErrorCode::kInvalidArgument, "c0 values must be > 0");
    require(normality_row < model.p, ErrorCode::kInvalidArgument, "normality row out of range");
    require(ci_level > 0.0 && ci_level < 1.0, ErrorCode::kInvalidArgument, "CI level must be in (0, 1)");
    require(substeps >= 1 && burn_in >= 0.0, ErrorCode::kInvalidArgument, "invalid simulation settings");
    require(failure_threshold >= 0.0 && failure_threshold <= 1.0, ErrorCode::kInvalidArgument,
            "failure threshold must be in [0, 1]");
  }

  SimConfig sim(std::uint64_t seed) const {
    SimConfig s;
    s.substeps = substeps;
    s.burn_in = burn_in;
    s.seed = seed;
    return s;
  }

  std::uint64_t seed_of(std::size_t replication) const { return base_seed + replication; }
};

inline Json to_json(const ExperimentConfig& c) {
  return Json{{"name", c.name},
              {"model",
               {{"structure", c.model.structure},
                {"p", c.model.p},
                {"s_star", c.model.s_star},
                {"signal", c.model.signal},
                {"sigma", c.model.sigma},
                {"phi", {{"kind", to_string(c.model.phi.kind)}, {"scale", c.model.phi.scale}, {"gain", c.model.phi.gain}}},
                {"model_seed", c.model.model_seed}}},
              {"n", c.n_list},
              {"alpha", c.alpha},
              {"c0", c.c0_list},
              {"replications", c.replications},
              {"base_seed", c.base_seed},
              {"stages", c.stages.names()},
              {"substeps", c.substeps},
              {"burn_in", c.burn_in},
              {"pivot_rule", to_string(c.pivot_rule)},
              {"normality_row", c.normality_row},
              {"ci_level", c.ci_level},
              {"kappa_check", c.kappa_check},
              {"factor_budget", c.factor_budget},
              {"failure_threshold", c.failure_threshold}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig experiment_config_from_json(const Json& j) {
  require(j.is_object(), ErrorCode::kMalformedFile, "experiment config must be a JSON object");
  static const std::vector<std::string> known{"name", "model", "n", "alpha", "c0", "replications", "base_seed",
                                              "out_dir", "stages", "substeps", "burn_in", "pivot_rule",
                                              "normality_row", "ci_level", "kappa_check", "factor_budget",
                                              "failure_threshold"};
  for (const auto& item : j.items())
    require(std::find(known.begin(), known.end(), item.key()) != known.end(), ErrorCode::kMalformedFile,
            "unknown experiment config key '" + item.key() + "'");
  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    if (j.contains("model")) {
      const Json& m = j.at("model");
      c.model.structure = m.value("structure", c.model.structure);
      c.model.p = m.value("p", c.model.p);
      c.model.s_star = m.value("s_star", c.model.s_star);
      c.model.signal = m.value("signal", c.model.signal);
      c.model.sigma = m.value("sigma", c.model.sigma);
      c.model.model_seed = m.value("model_seed", c.model.model_seed);
      if (m.contains("phi")) {
        const Json& f = m.at("phi");
        c.model.phi.kind = phi_kind_from_string(f.value("kind", std::string(to_string(c.model.phi.kind))));
        c.model.phi.scale = f.value("scale", c.model.phi.scale);
        c.model.phi.gain = f.value("gain", c.model.phi.gain);
      }
    }
    c.n_list = j.value("n", c.n_list);
    c.alpha = j.value("alpha", c.alpha);
    c.c0_list = j.value("c0", c.c0_list);
    c.replications = j.value("replications", c.replications);
    c.base_seed = j.value("base_seed", c.base_seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    if (j.contains("stages")) {
      c.stages = Stages{false, false, false, false, false};
      for (const auto& s : j.at("stages")) {
        const auto name = s.get<std::string>();
        if (name == "sigma") c.stages.sigma = true;
        else if (name == "dantzig") c.stages.dantzig = true;
        else if (name == "select") c.stages.select = true;
        else if (name == "refit") c.stages.refit = true;
        else if (name == "factors") c.stages.factors = true;
        else throw Error(ErrorCode::kMalformedFile, "unknown stage '" + name + "'");
      }
    }
    c.substeps = j.value("substeps", c.substeps);
    c.burn_in = j.value("burn_in", c.burn_in);
    if (j.contains("pivot_rule")) c.pivot_rule = pivot_rule_from_string(j.at("pivot_rule").get<std::string>());
    c.normality_row = j.value("normality_row", c.normality_row);
    c.ci_level = j.value("ci_level", c.ci_level);
    c.kappa_check = j.value("kappa_check", c.kappa_check);
    c.factor_budget = j.value("factor_budget", c.factor_budget);
    c.failure_threshold = j.value("failure_threshold", c.failure_threshold);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kMalformedFile, std::string("experiment config: ") + e.what());
  }
  c.check();
  return c;
}

// ---------------------------------------------------------------------------
// Per-replication records

struct CellRecord {
  double c0 = 0.0;
  double gamma = 0.0;
  std::size_t lp_failures = 0;
  double l1_sup = 0.0, l2_sup = 0.0, linf_sup = 0.0;
  // select
  std::size_t rows_recovered = 0;
  bool exact_recovery = false;
  // error bound ||h||_1 <= 8 S* gamma / kappa^2 on rows where the truth is feasible
  std::size_t truth_feasible_rows = 0;
  std::size_t bound_holds = 0, bound_violated = 0, bound_undetermined = 0;
  double bound_ratio_max = 0.0;  // max ||h||_1 / bound; bound uses an upper bound on kappa
  // refit
  std::size_t refit_failures = 0;
  bool normality_recovered = false;  // T_hat = T0 on the normality row
  std::vector<double> z;             // per T0 coordinate of the normality row
  std::vector<int> covered;
};

struct FactorRecord {
  double kappa = 0.0;
  double kappa_lower = 0.0;
  double re = 0.0;
  double finf = 0.0;
};

struct ReplicationRecord {
  std::size_t n = 0;
  std::size_t replication = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;
  double sigma_sup_err = 0.0;
  std::vector<CellRecord> cells;
  std::optional<FactorRecord> factors;
};

inline Json to_json(const CellRecord& c) {
  return Json{{"c0", c.c0},
              {"gamma", c.gamma},
              {"lp_failures", c.lp_failures},
              {"l1_sup", c.l1_sup},
              {"l2_sup", c.l2_sup},
              {"linf_sup", c.linf_sup},
              {"rows_recovered", c.rows_recovered},
              {"exact_recovery", c.exact_recovery},
              {"truth_feasible_rows", c.truth_feasible_rows},
              {"bound_holds", c.bound_holds},
              {"bound_violated", c.bound_violated},
              {"bound_undetermined", c.bound_undetermined},
              {"bound_ratio_max", c.bound_ratio_max},
              {"refit_failures", c.refit_failures},
              {"normality_recovered", c.normality_recovered},
              {"z", c.z},
              {"covered", c.covered}};
}

inline CellRecord cell_record_from_json(const Json& j) {
  CellRecord c;
  c.c0 = j.at("c0").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.lp_failures = j.at("lp_failures").get<std::size_t>();
  c.l1_sup = j.at("l1_sup").get<double>();
  c.l2_sup = j.at("l2_sup").get<double>();
  c.linf_sup = j.at("linf_sup").get<double>();
  c.rows_recovered = j.at("rows_recovered").get<std::size_t>();
  c.exact_recovery = j.at("exact_recovery").get<bool>();
  c.truth_feasible_rows = j.at("truth_feasible_rows").get<std::size_t>();
  c.bound_holds = j.at("bound_holds").get<std::size_t>();
  c.bound_violated = j.at("bound_violated").get<std::size_t>();
  c.bound_undetermined = j.at("bound_undetermined").get<std::size_t>();
  c.bound_ratio_max = j.at("bound_ratio_max").get<double>();
  c.refit_failures = j.at("refit_failures").get<std::size_t>();
  c.normality_recovered = j.at("normality_recovered").get<bool>();
  c.z = j.at("z").get<std::vector<double>>();
  c.covered = j.at("covered").get<std::vector<int>>();
  return c;
}

inline Json to_json(const ReplicationRecord& r) {
  Json cells = Json::array();
  for (const auto& c : r.cells) cells.push_back(to_json(c));
  Json out{{"n", r.n},
           {"replication", r.replication},
           {"seed", r.seed},
           {"failed", r.failed},
           {"failure", r.failure},
           {"sigma_sup_err", r.sigma_sup_err},
           {"cells", cells}};
  if (r.factors)
    out["factors"] = {{"kappa", r.factors->kappa},
                      {"kappa_lower", r.factors->kappa_lower},
                      {"re", r.factors->re},
                      {"finf", r.factors->finf}};
  return out;
}

inline ReplicationRecord replication_record_from_json(const Json& j) {
  ReplicationRecord r;
  try {
    r.n = j.at("n").get<std::size_t>();
    r.replication = j.at("replication").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.failed = j.at("failed").get<bool>();
    r.failure = j.at("failure").get<std::string>();
    r.sigma_sup_err = j.at("sigma_sup_err").get<double>();
    for (const auto& c : j.at("cells")) r.cells.push_back(cell_record_from_json(c));
    if (j.contains("factors")) {
      const Json& f = j.at("factors");
      r.factors = FactorRecord{f.at("kappa").get<double>(), f.at("kappa_lower").get<double>(), f.at("re").get<double>(),
                               f.at("finf").get<double>()};
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kMalformedFile, std::string("replication record: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// One replication

/// Runs simulation and every enabled stage for (n, replication). Stage errors
/// are captured in the record; only configuration errors propagate.
inline ReplicationRecord run_replication(const ExperimentConfig& cfg, const ModelSpec& model, std::size_t n,
                                         std::size_t replication) {
  ReplicationRecord rec;
  rec.n = n;
  rec.replication = replication;
  rec.seed = cfg.seed_of(replication);
  const std::size_t p = model.dimension();
  const auto pp = static_cast<Eigen::Index>(p);
  try {
    const SamplingGrid grid = SamplingGrid::from_alpha(n, cfg.alpha);
    const PathData path = simulate(model, grid, cfg.sim(rec.seed));
    const SufficientStats stats = accumulate_stats(path, model.phi());
    const SigmaHat sig = sigma_hat(stats);
    for (Eigen::Index i = 0; i < pp; ++i) {
      const double s0 = model.sigma()[i];
      rec.sigma_sup_err = std::max(rec.sigma_sup_err, std::abs(sig.variance[i] - s0 * s0));
    }
    if (!cfg.stages.dantzig) return rec;
    for (Eigen::Index i = 0; i < pp; ++i) require_positive_variance(sig.variance[i]);

    const Matrix gn = stats.gram / static_cast<double>(stats.n);  // V_i = gn / sigma_i^2
    std::vector<Vector> truth(p);
    std::vector<IndexSet> t0(p);
    for (std::size_t i = 0; i < p; ++i) {
      truth[i] = model.theta().dense_row(i);
      t0[i] = model.theta().support(i);
    }
    const double s_star = static_cast<double>(std::max<std::size_t>(model.s_star(), 1));
    const std::size_t nrow = cfg.normality_row;

    for (double c0 : cfg.c0_list) {
      CellRecord cell;
      cell.c0 = c0;
      cell.gamma = gamma_rule(stats.n, stats.delta, p, c0);
      DantzigConfig dcfg;
      dcfg.c0 = c0;
      dcfg.pivot_rule = cfg.pivot_rule;
      std::size_t recovered = 0;
      for (std::size_t i = 0; i < p; ++i) {
        const double s2 = sig.variance[static_cast<Eigen::Index>(i)];
        const Matrix v = gn / s2;
        const Vector b = score_at_zero(stats, i, s2);
        const DantzigFit fit = solve_dantzig(v, b, cell.gamma, dcfg, i);
        if (fit.status != LpStatus::kOptimal) ++cell.lp_failures;
        const Vector h = fit.theta - truth[i];
        const double l1 = h.lpNorm<1>();
        cell.l1_sup = std::max(cell.l1_sup, l1);
        cell.l2_sup = std::max(cell.l2_sup, h.norm());
        cell.linf_sup = std::max(cell.linf_sup, h.lpNorm<Eigen::Infinity>());

        if (cfg.kappa_check && !t0[i].empty() &&
            (b - v * truth[i]).lpNorm<Eigen::Infinity>() <= cell.gamma) {
          ++cell.truth_feasible_rows;
          const auto check = check_l1_bound(v, t0[i], l1, s_star, cell.gamma);
          switch (check.verdict) {
            case BoundVerdict::kHolds: ++cell.bound_holds; break;
            case BoundVerdict::kViolated: ++cell.bound_violated; break;
            case BoundVerdict::kUndetermined: ++cell.bound_undetermined; break;
          }
          if (std::isfinite(check.bound) && check.bound > 0.0)
            cell.bound_ratio_max = std::max(cell.bound_ratio_max, l1 / check.bound);
        }

        if (!cfg.stages.select) continue;
        const IndexSet support = threshold_support(fit.theta, cell.gamma);
        const bool hit = support == t0[i];
        recovered += hit;
        if (!cfg.stages.refit || support.empty()) continue;
        try {
          SelectionRefit refit = refit_row(stats, i, s2, support);
          if (i == nrow && hit) {
            refit = asymptotic_ci(std::move(refit), stats, s2, cfg.ci_level);
            cell.normality_recovered = true;
            for (std::size_t k = 0; k < support.size(); ++k) {
              const auto j = static_cast<Eigen::Index>(support[k]);
              const auto kk = static_cast<Eigen::Index>(k);
              cell.z.push_back((refit.theta[j] - truth[i][j]) / refit.se[kk]);
              cell.covered.push_back(refit.ci_lo[kk] <= truth[i][j] && truth[i][j] <= refit.ci_hi[kk]);
            }
          }
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kRefitSingular) throw;
          ++cell.refit_failures;
        }
      }
      cell.rows_recovered = recovered;
      cell.exact_recovery = cfg.stages.select && recovered == p;
      rec.cells.push_back(std::move(cell));
    }

    if (cfg.stages.factors && !t0[nrow].empty()) {
      const double s2 = sig.variance[static_cast<Eigen::Index>(nrow)];
      const Matrix v = gn / s2;
      const auto k = kappa(v, t0[nrow]);
      SamplerOptions opt;
      opt.budget = std::max<std::size_t>(cfg.factor_budget, 1);
      opt.seed = rec.seed;
      FactorRecord f;
      f.kappa = k.value;
      f.kappa_lower = k.lower_bound;
      f.re = re_factor(v, t0[nrow], opt).value;
      f.finf = f_q_factor(v, t0[nrow], std::numeric_limits<double>::infinity(), opt).value;
      rec.factors = f;
    }
  } catch (const std::exception& e) {
    rec.failed = true;
    rec.failure = e.what();
    rec.cells.clear();
    rec.factors.reset();
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Aggregation

struct Quartiles {
  double q25 = std::nan("");
  double median = std::nan("");
  double q75 = std::nan("");
};

/// Linear interpolation between order statistics (sample quantile type 7).
inline double quantile(std::vector<double> values, double prob) {
  require(!values.empty(), ErrorCode::kInvalidArgument, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = prob * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline Quartiles quartiles(const std::vector<double>& values) {
  if (values.empty()) return {};
  return {quantile(values, 0.25), quantile(values, 0.5), quantile(values, 0.75)};
}

struct NormalityCoordinate {
  std::size_t column = 0;
  std::size_t samples = 0;
  double ks_statistic = std::nan("");
  double ks_p_value = std::nan("");
  double coverage = std::nan("");
  double z_mean = std::nan("");
  double z_sd = std::nan("");
};

struct CellAggregate {
  std::size_t n = 0;
  double c0 = 0.0;
  double gamma = 0.0;
  std::size_t replications = 0;  // successful replications
  Quartiles l1, l2, linf;
  double recovery_rate = std::nan("");
  std::size_t lp_failures = 0;
  std::size_t truth_feasible_rows = 0, bound_holds = 0, bound_violated = 0, bound_undetermined = 0;
  double bound_ratio_max = 0.0;
  std::size_t refit_failures = 0;
  std::size_t normality_replications = 0;
  std::vector<NormalityCoordinate> normality;
};

struct SampleSizeAggregate {
  std::size_t n = 0;
  double delta = 0.0;
  std::size_t replications = 0;
  std::size_t failures = 0;
  double failure_rate = 0.0;
  bool flagged = false;
  Quartiles sigma_sup_err;
  Quartiles kappa, re, finf;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<SampleSizeAggregate> per_n;
  std::vector<CellAggregate> cells;
  std::vector<ReplicationRecord> records;  // sorted by (n position in config, replication)

  bool any_flagged() const {
    return std::any_of(per_n.begin(), per_n.end(), [](const SampleSizeAggregate& a) { return a.flagged; });
  }
  const CellAggregate* cell(std::size_t n, double c0) const {
    for (const auto& c : cells)
      if (c.n == n && c.c0 == c0) return &c;
    return nullptr;
  }
  const SampleSizeAggregate* sample_size(std::size_t n) const {
    for (const auto& a : per_n)
      if (a.n == n) return &a;
    return nullptr;
  }
};

/// Pure fold of the records; their order does not matter.
inline ExperimentReport aggregate(const ExperimentConfig& cfg, std::vector<ReplicationRecord> records,
                                  const IndexSet& normality_support) {
  auto n_pos = [&](std::size_t n) {
    return static_cast<std::size_t>(std::find(cfg.n_list.begin(), cfg.n_list.end(), n) - cfg.n_list.begin());
  };
  std::sort(records.begin(), records.end(), [&](const ReplicationRecord& a, const ReplicationRecord& b) {
    return std::make_pair(n_pos(a.n), a.replication) < std::make_pair(n_pos(b.n), b.replication);
  });
  ExperimentReport report;
  report.config = cfg;
  for (std::size_t n : cfg.n_list) {
    SampleSizeAggregate agg;
    agg.n = n;
    agg.delta = SamplingGrid::from_alpha(n, cfg.alpha).delta();
    std::vector<double> sig, kap, re, finf;
    for (const auto& r : records) {
      if (r.n != n) continue;
      ++agg.replications;
      if (r.failed) {
        ++agg.failures;
        continue;
      }
      sig.push_back(r.sigma_sup_err);
      if (r.factors) {
        kap.push_back(r.factors->kappa);
        re.push_back(r.factors->re);
        finf.push_back(r.factors->finf);
      }
    }
    agg.failure_rate = agg.replications ? static_cast<double>(agg.failures) / static_cast<double>(agg.replications) : 0.0;
    agg.flagged = agg.failure_rate > cfg.failure_threshold;
    agg.sigma_sup_err = quartiles(sig);
    agg.kappa = quartiles(kap);
    agg.re = quartiles(re);
    agg.finf = quartiles(finf);
    report.per_n.push_back(agg);

    if (!cfg.stages.dantzig) continue;
    for (std::size_t ci = 0; ci < cfg.c0_list.size(); ++ci) {
      CellAggregate cell;
      cell.n = n;
      cell.c0 = cfg.c0_list[ci];
      cell.gamma = gamma_rule(n, agg.delta, cfg.model.p, cell.c0);
      std::vector<double> l1, l2, linf;
      std::size_t recovered = 0;
      std::vector<std::vector<double>> z(normality_support.size());
      std::vector<std::size_t> covered(normality_support.size(), 0);
      for (const auto& r : records) {
        if (r.n != n || r.failed) continue;
        const CellRecord& c = r.cells.at(ci);
        ++cell.replications;
        l1.push_back(c.l1_sup);
        l2.push_back(c.l2_sup);
        linf.push_back(c.linf_sup);
        recovered += c.exact_recovery;
        cell.lp_failures += c.lp_failures;
        cell.truth_feasible_rows += c.truth_feasible_rows;
        cell.bound_holds += c.bound_holds;
        cell.bound_violated += c.bound_violated;
        cell.bound_undetermined += c.bound_undetermined;
        cell.bound_ratio_max = std::max(cell.bound_ratio_max, c.bound_ratio_max);
        cell.refit_failures += c.refit_failures;
        if (c.normality_recovered && c.z.size() == normality_support.size()) {
          ++cell.normality_replications;
          for (std::size_t k = 0; k < c.z.size(); ++k) {
            z[k].push_back(c.z[k]);
            covered[k] += static_cast<std::size_t>(c.covered[k]);
          }
        }
      }
      cell.l1 = quartiles(l1);
      cell.l2 = quartiles(l2);
      cell.linf = quartiles(linf);
      if (cfg.stages.select && cell.replications)
        cell.recovery_rate = static_cast<double>(recovered) / static_cast<double>(cell.replications);
      if (cfg.stages.refit) {
        for (std::size_t k = 0; k < normality_support.size(); ++k) {
          NormalityCoordinate nc;
          nc.column = normality_support[k];
          nc.samples = z[k].size();
          if (!z[k].empty()) {
            nc.coverage = static_cast<double>(covered[k]) / static_cast<double>(z[k].size());
            double mean = 0.0, sq = 0.0;
            for (double v : z[k]) mean += v;
            mean /= static_cast<double>(z[k].size());
            for (double v : z[k]) sq += (v - mean) * (v - mean);
            nc.z_mean = mean;
            nc.z_sd = z[k].size() > 1 ? std::sqrt(sq / static_cast<double>(z[k].size() - 1)) : std::nan("");
          }
          if (z[k].size() >= 20) {
            const auto ks = ks_normality(z[k]);
            nc.ks_statistic = ks.statistic;
            nc.ks_p_value = ks.p_value;
          }
          cell.normality.push_back(nc);
        }
      }
      report.cells.push_back(std::move(cell));
    }
  }
  report.records = std::move(records);
  return report;
}

struct RunTiming {
  std::vector<double> replication_seconds;  // aligned with ExperimentReport::records
  double total_seconds = 0.0;
};

/// Replications run concurrently; each one is sequential and pure.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, std::size_t workers = default_workers(),
                                       RunTiming* timing = nullptr,
                                       const std::function<void(const ReplicationRecord&)>& progress = {}) {
  cfg.check();
  const ModelSpec model = build_model(cfg.model);
  const std::size_t jobs = cfg.n_list.size() * cfg.replications;
  std::vector<ReplicationRecord> records(jobs);
  std::vector<double> seconds(jobs, 0.0);
  const auto start = std::chrono::steady_clock::now();
  std::mutex progress_mutex;
  parallel_for(jobs, workers, [&](std::size_t job) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = cfg.n_list[job / cfg.replications];
    records[job] = run_replication(cfg, model, n, job % cfg.replications);
    seconds[job] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress(records[job]);
    }
  });
  if (timing) {
    timing->replication_seconds = seconds;
    timing->total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return aggregate(cfg, std::move(records), model.theta().support(cfg.normality_row));
}

// ---------------------------------------------------------------------------
// Output

inline Json to_json(const Quartiles& q) {
  auto num = [](double v) { return std::isnan(v) ? Json(nullptr) : Json(v); };
  return Json{{"q25", num(q.q25)}, {"median", num(q.median)}, {"q75", num(q.q75)}};
}

inline Json to_json(const ExperimentReport& r) {
  auto num = [](double v) { return std::isnan(v) ? Json(nullptr) : Json(v); };
  Json per_n = Json::array();
  for (const auto& a : r.per_n) {
    Json j{{"n", a.n},
           {"delta", a.delta},
           {"replications", a.replications},
           {"failures", a.failures},
           {"failure_rate", a.failure_rate},
           {"flagged", a.flagged}};
    if (r.config.stages.sigma) j["sigma_sup_err"] = to_json(a.sigma_sup_err);
    if (r.config.stages.factors) {
      j["kappa"] = to_json(a.kappa);
      j["re_upper"] = to_json(a.re);
      j["finf_upper"] = to_json(a.finf);
    }
    per_n.push_back(j);
  }
  Json cells = Json::array();
  for (const auto& c : r.cells) {
    Json j{{"n", c.n},
           {"c0", c.c0},
           {"gamma", c.gamma},
           {"replications", c.replications},
           {"l1_sup", to_json(c.l1)},
           {"l2_sup", to_json(c.l2)},
           {"linf_sup", to_json(c.linf)},
           {"lp_failures", c.lp_failures}};
    if (r.config.stages.select) j["recovery_rate"] = num(c.recovery_rate);
    if (r.config.kappa_check)
      j["l1_bound"] = {{"truth_feasible_rows", c.truth_feasible_rows},
                       {"holds", c.bound_holds},
                       {"violated", c.bound_violated},
                       {"undetermined", c.bound_undetermined},
                       {"max_ratio", c.bound_ratio_max}};
    if (r.config.stages.refit) {
      Json coords = Json::array();
      for (const auto& nc : c.normality)
        coords.push_back({{"column", nc.column},
                          {"samples", nc.samples},
                          {"ks_statistic", num(nc.ks_statistic)},
                          {"ks_p_value", num(nc.ks_p_value)},
                          {"coverage", num(nc.coverage)},
                          {"z_mean", num(nc.z_mean)},
                          {"z_sd", num(nc.z_sd)}});
      j["refit_failures"] = c.refit_failures;
      j["normality"] = {{"row", r.config.normality_row},
                        {"replications", c.normality_replications},
                        {"level", r.config.ci_level},
                        {"coordinates", coords}};
    }
    cells.push_back(j);
  }
  Json records = Json::array();
  for (const auto& rec : r.records) records.push_back(to_json(rec));
  return Json{{"format", "sparse-drift-report v1"},
              {"note", "desk-scale settings are choices of this implementation, not reference values"},
              {"initial_state", "point at the origin followed by a burn-in of " + format_double(r.config.burn_in) +
                                    " time units before the first observation, standing in for the stationary law"},
              {"config", to_json(r.config)},
              {"per_n", per_n},
              {"cells", cells},
              {"records", records}};
}

inline constexpr const char* kQuantileCsvHeader = "n,c0,metric,quantile,value";

/// Metrics reported with quartiles in the tidy table, given the stages.
inline std::vector<std::string> quantile_metrics(const Stages& s) {
  std::vector<std::string> m;
  if (s.sigma) m.push_back("sigma_sup_err");
  if (s.dantzig) {
    m.push_back("l1_sup");
    m.push_back("l2_sup");
    m.push_back("linf_sup");
  }
  return m;
}

/// One row per (n, c0, metric, quantile). sigma_sup_err does not depend on
/// c0 and is repeated across the c0 values.
inline std::string quantile_csv(const ExperimentReport& r) {
  std::string out = std::string(kQuantileCsvHeader) + "\n";
  const auto metrics = quantile_metrics(r.config.stages);
  auto row = [&](std::size_t n, double c0, const std::string& metric, const Quartiles& q) {
    const std::pair<const char*, double> qs[] = {{"0.25", q.q25}, {"0.5", q.median}, {"0.75", q.q75}};
    for (const auto& [name, value] : qs)
      out += std::to_string(n) + "," + format_double(c0) + "," + metric + "," + name + "," +
             (std::isnan(value) ? std::string("NA") : format_double(value)) + "\n";
  };
  for (const auto& a : r.per_n) {
    for (double c0 : r.config.c0_list) {
      const CellAggregate* cell = r.cell(a.n, c0);
      for (const auto& m : metrics) {
        if (m == "sigma_sup_err") row(a.n, c0, m, a.sigma_sup_err);
        else if (cell && m == "l1_sup") row(a.n, c0, m, cell->l1);
        else if (cell && m == "l2_sup") row(a.n, c0, m, cell->l2);
        else if (cell && m == "linf_sup") row(a.n, c0, m, cell->linf);
      }
    }
  }
  return out;
}

inline constexpr const char* kRateCsvHeader = "n,c0,metric,value";

/// Rates and test statistics, one row per (n, c0, metric).
inline std::string rate_csv(const ExperimentReport& r) {
  std::string out = std::string(kRateCsvHeader) + "\n";
  auto row = [&](std::size_t n, double c0, const std::string& metric, double value) {
    out += std::to_string(n) + "," + format_double(c0) + "," + metric + "," +
           (std::isnan(value) ? std::string("NA") : format_double(value)) + "\n";
  };
  for (const auto& c : r.cells) {
    const auto* a = r.sample_size(c.n);
    row(c.n, c.c0, "failure_rate", a ? a->failure_rate : std::nan(""));
    if (r.config.stages.select) row(c.n, c.c0, "recovery_rate", c.recovery_rate);
    if (r.config.stages.refit)
      for (const auto& nc : c.normality) {
        const std::string suffix = "_col" + std::to_string(nc.column);
        row(c.n, c.c0, "ks_statistic" + suffix, nc.ks_statistic);
        row(c.n, c.c0, "ks_p_value" + suffix, nc.ks_p_value);
        row(c.n, c.c0, "coverage" + suffix, nc.coverage);
      }
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + file.string());
  out << text;
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + file.string());
}

/// Writes report.json, quantiles.csv and rates.csv (and timing.json when
/// timing is given) into `dir`.
inline void emit_report(const ExperimentReport& r, const std::filesystem::path& dir, const RunTiming* timing = nullptr) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  write_text_file(dir / "report.json", to_json(r).dump(2) + "\n");
  write_text_file(dir / "quantiles.csv", quantile_csv(r));
  write_text_file(dir / "rates.csv", rate_csv(r));
  if (timing)
    write_text_file(dir / "timing.json",
                    Json{{"total_seconds", timing->total_seconds}, {"replication_seconds", timing->replication_seconds}}.dump(2) +
                        "\n");
}

}  // namespace sparse_drift
