#include <gtest/gtest.h>

#include <cmath>

#include "sparse_drift/dantzig.hpp"
#include "sparse_drift/rng.hpp"

using namespace sparse_drift;

namespace {

Matrix diag2(double a, double b) {
  Matrix v = Matrix::Zero(2, 2);
  v(0, 0) = a;
  v(1, 1) = b;
  return v;
}

Matrix random_spd(RandomStream& rng, Eigen::Index p) {
  Matrix m(p, p);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  return m * m.transpose() / static_cast<double>(p) + 0.2 * Matrix::Identity(p, p);
}

}  // namespace

TEST(GammaRule, Arithmetic) {
  EXPECT_NEAR(gamma_rule(100, 0.1, 10, 1.0), 1.459429250939186, 1e-12);
  EXPECT_DOUBLE_EQ(gamma_rule(100, 0.1, 10, 2.0), 2.0 * gamma_rule(100, 0.1, 10, 1.0));
  EXPECT_THROW(gamma_rule(100, 0.1, 10, 0.0), Error);
  DantzigConfig cfg;
  cfg.c0 = 0.0;
  EXPECT_THROW(cfg.check(), Error);
}

TEST(Dantzig, ZeroWhenScoreSmall) {
  const auto fit = solve_dantzig(diag2(1, 1), Vector((Vector(2) << 0.3, -0.4).finished()), 0.5, {});
  EXPECT_EQ(fit.status, LpStatus::kOptimal);
  EXPECT_EQ(fit.theta, Vector::Zero(2));
  EXPECT_EQ(fit.objective, 0.0);
}

TEST(Dantzig, SoftThreshold) {
  Matrix v(1, 1);
  v << 2.0;
  EXPECT_NEAR(solve_dantzig(v, Vector::Constant(1, 3.0), 1.0, {}).theta[0], 1.0, 1e-12);
  EXPECT_EQ(solve_dantzig(v, Vector::Constant(1, 0.5), 1.0, {}).theta[0], 0.0);
  EXPECT_NEAR(solve_dantzig(v, Vector::Constant(1, -3.0), 1.0, {}).theta[0], -1.0, 1e-12);
}

TEST(Dantzig, DiagonalComponentwise) {
  const Vector b = (Vector(2) << 2.0, -3.0).finished();
  const auto fit = solve_dantzig(diag2(1, 2), b, 0.5, {});
  EXPECT_NEAR(fit.theta[0], 1.5, 1e-12);
  EXPECT_NEAR(fit.theta[1], -1.25, 1e-12);
  const Vector oracle = brute_force_dantzig(diag2(1, 2), b, 0.5, 1e-3, 4.0);
  EXPECT_LE((oracle - fit.theta).cwiseAbs().maxCoeff(), 1e-3 + 1e-12);
}

TEST(BruteForce, ZeroAndSoftThreshold) {
  EXPECT_EQ(brute_force_dantzig(diag2(1, 1), Vector::Constant(2, 0.1), 0.5, 1e-2, 1.0), Vector::Zero(2));
  Matrix v(1, 1);
  v << 2.0;
  EXPECT_NEAR(brute_force_dantzig(v, Vector::Constant(1, 3.0), 1.0, 1e-3, 5.0)[0], 1.0, 1e-3);
  EXPECT_EQ(brute_force_dantzig(diag2(1, 1), Vector::Constant(2, 1.0), 100.0, 1e-2, 1.0), Vector::Zero(2));
  try {
    brute_force_dantzig(v, Vector::Constant(1, 30.0), 1.0, 1e-3, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoFeasibleGridPoint);
  }
}

TEST(Dantzig, FeasibilityAndOracleOnRandomInstances) {
  RandomStream rng(21, Stream::kTest);
  for (int rep = 0; rep < 40; ++rep) {
    const Eigen::Index p = 1 + static_cast<Eigen::Index>(rep % 3);
    const Matrix v = random_spd(rng, p);
    Vector b(p);
    for (Eigen::Index j = 0; j < p; ++j) b[j] = rng.uniform(-2.0, 2.0);
    const double gamma = rng.uniform(0.05, 0.5);
    const auto fit = solve_dantzig(v, b, gamma, {});
    ASSERT_EQ(fit.status, LpStatus::kOptimal);
    EXPECT_LE(fit.residual_sup, gamma + 1e-9);
    const Vector oracle = brute_force_dantzig(v, b, gamma, 1e-3, 20.0);
    EXPECT_LE(std::abs(oracle.lpNorm<1>() - fit.objective), 2e-3 * static_cast<double>(p));
    EXPECT_LE(fit.objective, oracle.lpNorm<1>() + 1e-9);
  }
}

TEST(Dantzig, PivotRulesAgreeOnObjective) {
  RandomStream rng(22, Stream::kTest);
  for (int rep = 0; rep < 30; ++rep) {
    const Matrix v = random_spd(rng, 8);
    Vector b(8);
    for (Eigen::Index j = 0; j < 8; ++j) b[j] = rng.uniform(-2.0, 2.0);
    DantzigConfig bland, largest;
    largest.pivot_rule = PivotRule::kLargestInfeasibility;
    const auto a = solve_dantzig(v, b, 0.2, bland);
    const auto c = solve_dantzig(v, b, 0.2, largest);
    EXPECT_NEAR(a.objective, c.objective, 1e-9);
  }
}

TEST(Dantzig, ObjectiveMonotoneInGamma) {
  RandomStream rng(23, Stream::kTest);
  const Matrix v = random_spd(rng, 6);
  Vector b(6);
  for (Eigen::Index j = 0; j < 6; ++j) b[j] = rng.uniform(-3.0, 3.0);
  double prev = std::numeric_limits<double>::infinity();
  for (double gamma : {0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2}) {
    const double obj = solve_dantzig(v, b, gamma, {}).objective;
    EXPECT_LE(obj, prev + 1e-12);
    prev = obj;
  }
  EXPECT_EQ(prev, 0.0);
}

TEST(Dantzig, TruthFeasibleErrorInCone) {
  // When theta0 is feasible the error h = theta_hat - theta0 satisfies
  // ||h_{T^c}||_1 <= ||h_T||_1 with T the support of theta0.
  RandomStream rng(24, Stream::kTest);
  for (int rep = 0; rep < 30; ++rep) {
    const Matrix v = random_spd(rng, 6);
    Vector theta0 = Vector::Zero(6);
    theta0[1] = 1.0;
    theta0[4] = -0.7;
    Vector noise(6);
    for (Eigen::Index j = 0; j < 6; ++j) noise[j] = rng.uniform(-0.1, 0.1);
    const Vector b = v * theta0 + noise;
    const auto fit = solve_dantzig(v, b, 0.1, {});
    const Vector h = fit.theta - theta0;
    const double on = std::abs(h[1]) + std::abs(h[4]);
    EXPECT_LE(h.lpNorm<1>() - on, on + 1e-9);
  }
}

TEST(Dantzig, FitAllRowsDeterministicAcrossWorkers) {
  RandomStream rng(25, Stream::kTest);
  SufficientStats s;
  s.p = 5;
  s.n = 100;
  s.delta = 0.1;
  s.gram = random_spd(rng, 5) * 100.0;
  s.cross = Matrix(5, 5);
  for (Eigen::Index k = 0; k < 25; ++k) s.cross.data()[k] = rng.normal() * 10.0;
  s.sq_incr = Vector::Constant(5, 10.0);
  DantzigConfig cfg;
  cfg.c0 = 0.05;
  const auto a = fit_all_rows(s, sigma_hat(s), cfg, {}, 1);
  const auto b = fit_all_rows(s, sigma_hat(s), cfg, {}, 3);
  ASSERT_EQ(a.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a[i].row, i);
    EXPECT_TRUE((a[i].theta.array() == b[i].theta.array()).all());
  }
}

TEST(Dantzig, FitAllRowsZeroRows) {
  SufficientStats s;
  s.p = 2;
  s.n = 10;
  s.delta = 0.1;
  s.gram = Matrix::Identity(2, 2) * 10.0;
  s.cross = Matrix::Constant(2, 2, 1e-3);
  s.sq_incr = Vector::Ones(2);
  for (const auto& f : fit_all_rows(s, sigma_hat(s), {})) EXPECT_EQ(f.theta, Vector::Zero(2));
}

TEST(Dantzig, RowErrorCarriesIndex) {
  SufficientStats s;
  s.p = 2;
  s.n = 10;
  s.delta = 0.1;
  s.gram = Matrix::Identity(2, 2);
  s.cross = Matrix::Zero(2, 2);
  s.sq_incr = (Vector(2) << 1.0, 0.0).finished();
  try {
    fit_all_rows(s, sigma_hat(s), {});
    FAIL();
  } catch (const RowError& e) {
    EXPECT_EQ(e.row(), 1u);
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateDiffusion);
  }
}

TEST(Dantzig, FitsJsonRoundTrip) {
  const auto fit = solve_dantzig(diag2(1, 2), Vector((Vector(2) << 2.0, -3.0).finished()), 0.5, {}, 1);
  const auto back = fits_from_json(Json::parse(fits_to_json({fit}).dump()), 2);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].row, 1u);
  EXPECT_EQ(back[0].theta, fit.theta);
  EXPECT_EQ(back[0].status, LpStatus::kOptimal);
}
