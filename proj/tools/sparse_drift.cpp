// sparse-drift: command-line front end.
//
// Exit codes: 0 success, 1 runtime error, 2 validation failure (bad
// arguments, malformed input, failed model checks), 3 when an mc run has a
// per-replication failure rate above the configured threshold.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "sparse_drift/sparse_drift.hpp"

namespace sd = sparse_drift;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;
constexpr int kExitFailureRate = 3;

struct ValidationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(const sd::Error& e) {
  switch (e.code()) {
    case sd::ErrorCode::kInvalidArgument:
    case sd::ErrorCode::kDimensionMismatch:
    case sd::ErrorCode::kMalformedFile:
    case sd::ErrorCode::kDegenerateDiffusion:
      return kExitValidation;
    default:
      return kExitRuntime;
  }
}

// "all", "3", "2-7" (inclusive) or "1,4,9".
sd::IndexSet parse_rows(const std::string& spec, std::size_t p) {
  sd::IndexSet rows;
  if (spec.empty() || spec == "all") {
    for (std::size_t i = 0; i < p; ++i) rows.push_back(i);
    return rows;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      const auto dash = item.find('-');
      if (dash == std::string::npos) {
        rows.push_back(std::stoul(item));
      } else {
        const std::size_t lo = std::stoul(item.substr(0, dash)), hi = std::stoul(item.substr(dash + 1));
        sd::require(lo <= hi, sd::ErrorCode::kInvalidArgument, "empty row range '" + item + "'");
        for (std::size_t i = lo; i <= hi; ++i) rows.push_back(i);
      }
    } catch (const std::logic_error&) {
      throw sd::Error(sd::ErrorCode::kInvalidArgument, "cannot parse row list '" + spec + "'");
    }
  }
  for (auto i : rows) sd::require(i < p, sd::ErrorCode::kInvalidArgument, "row " + std::to_string(i) + " out of range");
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  return rows;
}

void print_validation(const sd::ValidationReport& report) {
  for (const auto& c : report.clauses)
    std::cerr << "  (" << c.clause << ") " << sd::to_string(c.status) << ": " << c.detail << "\n";
}

void write_json(const std::string& out, const sd::Json& j) {
  if (out.empty() || out == "-")
    std::cout << j.dump(2) << "\n";
  else
    sd::write_json_file(out, j);
}

// --- simulate ---------------------------------------------------------------

struct SimulateArgs {
  std::string model, out;
  std::size_t n = 1000;
  double alpha = 0.0, delta = 0.0;
  std::uint64_t seed = 0;
  std::size_t substeps = 8;
  double burn_in = 10.0;
  bool force = false;
};

int run_simulate(const SimulateArgs& a) {
  const sd::ModelSpec model = sd::read_model(a.model);
  sd::require((a.alpha > 0.0) != (a.delta > 0.0), sd::ErrorCode::kInvalidArgument,
              "give exactly one of --alpha or --delta");
  const sd::SamplingGrid grid = a.alpha > 0.0 ? sd::SamplingGrid::from_alpha(a.n, a.alpha) : sd::SamplingGrid(a.n, a.delta);
  const auto report = sd::validate_model(model, grid);
  if (report.has_hard_failure()) {
    std::cerr << "model validation failed:\n";
    print_validation(report);
    if (!a.force) throw ValidationFailure("refusing to simulate an invalid model (use --force)");
  }
  sd::SimConfig cfg;
  cfg.seed = a.seed;
  cfg.substeps = a.substeps;
  cfg.burn_in = a.burn_in;
  sd::write_path_file(a.out, sd::simulate(model, grid, cfg));
  return 0;
}

// --- estimate-sigma ---------------------------------------------------------

struct SigmaArgs {
  std::string path, model, out, stats_out;
};

int run_estimate_sigma(const SigmaArgs& a) {
  const sd::ModelSpec model = sd::read_model(a.model);
  const sd::PathData path = sd::read_path_file(a.path);
  sd::require(path.dimension() == model.dimension(), sd::ErrorCode::kDimensionMismatch,
              "path and model dimensions differ");
  const sd::SufficientStats stats = sd::accumulate_stats(path, model.phi());
  if (!a.stats_out.empty()) sd::write_stats_file(a.stats_out, stats);
  const sd::SigmaHat sig = sd::sigma_hat(stats);
  write_json(a.out, sd::Json{{"n", stats.n}, {"delta", stats.delta}, {"sigma2", sd::vector_to_json(sig.variance)}});
  return 0;
}

// --- dantzig ----------------------------------------------------------------

struct DantzigArgs {
  std::string stats, rows = "all", out, pivot = "largest-infeasibility";
  double gamma_c = 1.0;
  std::size_t threads = 0;
};

int run_dantzig(const DantzigArgs& a) {
  const sd::SufficientStats stats = sd::read_stats_file(a.stats);
  sd::DantzigConfig cfg;
  cfg.c0 = a.gamma_c;
  cfg.pivot_rule = sd::pivot_rule_from_string(a.pivot);
  const auto fits = sd::fit_all_rows(stats, sd::sigma_hat(stats), cfg, parse_rows(a.rows, stats.p),
                                     a.threads ? a.threads : sd::default_workers());
  write_json(a.out, sd::fits_to_json(fits));
  std::size_t failed = 0;
  for (const auto& f : fits) failed += f.status != sd::LpStatus::kOptimal;
  if (failed) std::cerr << failed << " row(s) did not reach an optimal LP solution\n";
  return 0;
}

// --- select -----------------------------------------------------------------

struct SelectArgs {
  std::string fits, stats, out;
  bool refit = false;
  double level = 0.95;
};

int run_select(const SelectArgs& a) {
  const sd::SufficientStats stats = sd::read_stats_file(a.stats);
  const auto fits = sd::fits_from_json(sd::read_json_file(a.fits), stats.p);
  const sd::SigmaHat sig = sd::sigma_hat(stats);
  sd::Json out = sd::Json::array();
  for (const auto& fit : fits) {
    const double s2 = sig.variance[static_cast<Eigen::Index>(fit.row)];
    const sd::IndexSet support = sd::threshold_support(fit, fit.gamma);
    sd::SelectionRefit sel;
    if (a.refit) {
      try {
        sel = sd::asymptotic_ci(sd::refit_row(stats, fit.row, s2, support), stats, s2, a.level);
      } catch (const sd::Error& e) {
        if (e.code() != sd::ErrorCode::kRefitSingular) throw;
        sel.row = fit.row;
        sel.support = support;
        sel.theta = sd::Vector::Zero(static_cast<Eigen::Index>(stats.p));
        sel.flags.push_back("refit-singular");
      }
    } else {
      sel.row = fit.row;
      sel.support = support;
      sel.theta = sd::Vector::Zero(static_cast<Eigen::Index>(stats.p));
      for (auto j : support) sel.theta[static_cast<Eigen::Index>(j)] = fit.theta[static_cast<Eigen::Index>(j)];
      sel.flags.push_back("no-refit");
    }
    out.push_back(sd::to_json(sel));
  }
  write_json(a.out, out);
  return 0;
}

// --- factors ----------------------------------------------------------------

struct FactorArgs {
  std::string stats, support = "auto", kinds = "kappa", out;
  std::size_t row = 0;
  double gamma_c = 1.0;
  std::size_t budget = 100000;
  std::uint64_t seed = 1;
  std::size_t max_support = 12;
};

int run_factors(const FactorArgs& a) {
  const sd::SufficientStats stats = sd::read_stats_file(a.stats);
  sd::require(a.row < stats.p, sd::ErrorCode::kInvalidArgument, "row out of range");
  const double s2 = sd::sigma_hat(stats).variance[static_cast<Eigen::Index>(a.row)];
  sd::require_positive_variance(s2);
  const sd::Matrix v = sd::hessian_v(stats, s2);

  sd::IndexSet support;
  if (a.support == "auto") {
    sd::DantzigConfig cfg;
    cfg.c0 = a.gamma_c;
    const double gamma = sd::gamma_rule(stats.n, stats.delta, stats.p, a.gamma_c);
    support = sd::threshold_support(sd::solve_row(stats, a.row, s2, gamma, cfg), gamma);
  } else if (a.support.rfind("explicit:", 0) == 0) {
    support = parse_rows(a.support.substr(9), stats.p);
    sd::require(!support.empty(), sd::ErrorCode::kInvalidArgument, "explicit support is empty");
  } else {
    throw sd::Error(sd::ErrorCode::kInvalidArgument, "--support must be 'auto' or 'explicit:<list>'");
  }

  sd::SamplerOptions sopt;
  sopt.budget = a.budget;
  sopt.seed = a.seed;
  sd::KappaOptions kopt;
  kopt.max_support = a.max_support;

  sd::Json factors = sd::Json::array();
  std::stringstream ss(a.kinds);
  std::string kind;
  while (std::getline(ss, kind, ',')) {
    if (support.empty()) {
      factors.push_back({{"kind", kind}, {"value", nullptr}, {"note", "empty support"}});
      continue;
    }
    if (kind == "kappa") factors.push_back(sd::to_json(sd::kappa(v, support, kopt)));
    else if (kind == "re") factors.push_back(sd::to_json(sd::re_factor(v, support, sopt)));
    else if (kind == "finf") factors.push_back(sd::to_json(sd::f_q_factor(v, support, std::numeric_limits<double>::infinity(), sopt)));
    else if (kind.size() > 1 && kind[0] == 'f') {
      double q = 0.0;
      try {
        q = std::stod(kind.substr(1));
      } catch (const std::logic_error&) {
        throw sd::Error(sd::ErrorCode::kInvalidArgument, "unknown factor kind '" + kind + "'");
      }
      factors.push_back(sd::to_json(sd::f_q_factor(v, support, q, sopt)));
    } else {
      throw sd::Error(sd::ErrorCode::kInvalidArgument, "unknown factor kind '" + kind + "'");
    }
  }
  write_json(a.out, sd::Json{{"row", a.row}, {"support", support}, {"factors", factors}});
  return 0;
}

// --- mc ---------------------------------------------------------------------

struct McArgs {
  std::string config, out;
  std::size_t threads = 0;
  bool quiet = false;
  bool force = false;
};

int run_mc(const McArgs& a) {
  sd::ExperimentConfig cfg = sd::experiment_config_from_json(sd::read_json_file(a.config));
  std::string out = a.out.empty() ? cfg.out_dir : a.out;
  sd::require(!out.empty(), sd::ErrorCode::kInvalidArgument, "no output directory (--out or out_dir)");
  {
    const sd::ModelSpec model = sd::build_model(cfg.model);
    for (std::size_t n : cfg.n_list) {
      const auto report = sd::validate_model(model, sd::SamplingGrid::from_alpha(n, cfg.alpha));
      if (report.has_hard_failure()) {
        std::cerr << "model validation failed at n = " << n << ":\n";
        print_validation(report);
        if (!a.force) throw ValidationFailure("invalid experiment model (use --force)");
      }
    }
  }
  std::size_t done = 0;
  const std::size_t total = cfg.n_list.size() * cfg.replications;
  sd::RunTiming timing;
  const auto report = sd::run_experiment(cfg, a.threads ? a.threads : sd::default_workers(), &timing,
                                         [&](const sd::ReplicationRecord& r) {
                                           ++done;
                                           if (r.failed)
                                             std::cerr << "replication n=" << r.n << " r=" << r.replication
                                                       << " failed: " << r.failure << "\n";
                                           if (!a.quiet && (done % 10 == 0 || done == total))
                                             std::cerr << "\r" << done << "/" << total << std::flush;
                                         });
  if (!a.quiet) std::cerr << "\n";
  sd::emit_report(report, out, &timing);
  if (report.any_flagged()) {
    for (const auto& agg : report.per_n)
      if (agg.flagged)
        std::cerr << "n = " << agg.n << ": failure rate " << agg.failure_rate << " above threshold "
                  << cfg.failure_threshold << "\n";
    return kExitFailureRate;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse drift estimation for discretely observed diffusions"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "simulate a path from a model file");
  c_sim->add_option("--model", sim.model, "model JSON file")->required();
  c_sim->add_option("--n", sim.n, "number of increments")->required();
  c_sim->add_option("--alpha", sim.alpha, "grid exponent: delta = n^-alpha");
  c_sim->add_option("--delta", sim.delta, "grid step");
  c_sim->add_option("--seed", sim.seed, "random seed")->required();
  c_sim->add_option("--substeps", sim.substeps, "Euler sub-steps per observation")->capture_default_str();
  c_sim->add_option("--burn-in", sim.burn_in, "discarded time before the first observation")->capture_default_str();
  c_sim->add_flag("--force", sim.force, "simulate even if model validation fails");
  c_sim->add_option("--out", sim.out, "path file")->required();

  SigmaArgs sig;
  auto* c_sig = app.add_subcommand("estimate-sigma", "diffusion coefficients and sufficient statistics");
  c_sig->add_option("--path", sig.path, "path file")->required();
  c_sig->add_option("--model", sig.model, "model JSON file (for the link functions)")->required();
  c_sig->add_option("--stats-out", sig.stats_out, "write the sufficient statistics here");
  c_sig->add_option("--out", sig.out, "output JSON (default stdout)");

  DantzigArgs dz;
  auto* c_dz = app.add_subcommand("dantzig", "row-wise Dantzig selector");
  c_dz->add_option("--stats", dz.stats, "statistics file")->required();
  c_dz->add_option("--gamma-c", dz.gamma_c, "tuning constant c0")->capture_default_str();
  c_dz->add_option("--rows", dz.rows, "all | i | a-b | comma list")->capture_default_str();
  c_dz->add_option("--pivot", dz.pivot, "bland | largest-infeasibility")->capture_default_str();
  c_dz->add_option("--threads", dz.threads, "worker threads");
  c_dz->add_option("--out", dz.out, "fit file (default stdout)");

  SelectArgs sel;
  auto* c_sel = app.add_subcommand("select", "threshold supports and optionally refit");
  c_sel->add_option("--fits", sel.fits, "fit file")->required();
  c_sel->add_option("--stats", sel.stats, "statistics file")->required();
  c_sel->add_flag("--refit", sel.refit, "refit on the selected support with confidence intervals");
  c_sel->add_option("--level", sel.level, "confidence level")->capture_default_str();
  c_sel->add_option("--out", sel.out, "selection file (default stdout)");

  FactorArgs fac;
  auto* c_fac = app.add_subcommand("factors", "cone factors of the Hessian for one row");
  c_fac->add_option("--stats", fac.stats, "statistics file")->required();
  c_fac->add_option("--row", fac.row, "row index")->required();
  c_fac->add_option("--support", fac.support, "auto | explicit:<list>")->capture_default_str();
  c_fac->add_option("--gamma-c", fac.gamma_c, "c0 used by --support auto")->capture_default_str();
  c_fac->add_option("--kind", fac.kinds, "comma list of kappa, re, f<q>, finf")->capture_default_str();
  c_fac->add_option("--budget", fac.budget, "random directions for sampled factors")->capture_default_str();
  c_fac->add_option("--seed", fac.seed, "seed for sampled factors")->capture_default_str();
  c_fac->add_option("--max-support", fac.max_support, "largest support for exact kappa")->capture_default_str();
  c_fac->add_option("--out", fac.out, "output JSON (default stdout)");

  McArgs mc;
  auto* c_mc = app.add_subcommand("mc", "Monte Carlo experiment");
  c_mc->add_option("--config", mc.config, "experiment JSON")->required();
  c_mc->add_option("--out", mc.out, "output directory (overrides out_dir)");
  c_mc->add_option("--threads", mc.threads, "worker threads (default: SPARSE_DRIFT_THREADS or hardware)");
  c_mc->add_flag("--quiet", mc.quiet, "no progress output");
  c_mc->add_flag("--force", mc.force, "run even if model validation fails");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (c_sim->parsed()) return run_simulate(sim);
    if (c_sig->parsed()) return run_estimate_sigma(sig);
    if (c_dz->parsed()) return run_dantzig(dz);
    if (c_sel->parsed()) return run_select(sel);
    if (c_fac->parsed()) return run_factors(fac);
    if (c_mc->parsed()) return run_mc(mc);
  } catch (const ValidationFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const sd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
