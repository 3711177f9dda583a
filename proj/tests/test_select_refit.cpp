#include <gtest/gtest.h>

#include <cmath>

#include "sparse_drift/rng.hpp"
#include "sparse_drift/select_refit.hpp"

using namespace sparse_drift;

namespace {

SufficientStats make_stats(const Matrix& gram, const Matrix& cross, std::size_t n, double delta) {
  SufficientStats s;
  s.p = static_cast<std::size_t>(gram.rows());
  s.n = n;
  s.delta = delta;
  s.gram = gram;
  s.cross = cross;
  s.sq_incr = Vector::Ones(gram.rows());
  return s;
}

}  // namespace

TEST(Threshold, Basics) {
  EXPECT_TRUE(threshold_support(Vector::Zero(4), 0.1).empty());
  EXPECT_EQ(threshold_support(Vector((Vector(2) << 0.9, 0.1).finished()), 0.25), (IndexSet{0}));
  EXPECT_TRUE(threshold_support(Vector((Vector(2) << 0.5, -0.5).finished()), 0.25).empty());
  EXPECT_EQ(threshold_support(Vector((Vector(3) << -0.6, 0.0, 0.51).finished()), 0.25), (IndexSet{0, 2}));
  EXPECT_THROW(threshold_support(Vector::Zero(2), 0.0), Error);
}

TEST(Threshold, RecoveryEvent) {
  // ||theta_hat - theta0||_inf <= sqrt(gamma) and min |theta0_T| > 2 sqrt(gamma) => T_hat = T0
  RandomStream rng(4, Stream::kTest);
  const double gamma = 0.04, r = std::sqrt(gamma);
  for (int rep = 0; rep < 1000; ++rep) {
    Vector theta0 = Vector::Zero(8);
    theta0[2] = 2 * r + 1e-9 + rng.uniform();
    theta0[5] = -(2 * r + 1e-9 + rng.uniform());
    Vector est = theta0;
    for (Eigen::Index j = 0; j < 8; ++j) est[j] += rng.uniform(-r, r);
    ASSERT_EQ(threshold_support(est, gamma), (IndexSet{2, 5}));
  }
}

TEST(Refit, EmptySupport) {
  const auto s = make_stats(Matrix::Identity(2, 2), Matrix::Ones(2, 2), 10, 0.1);
  const auto r = refit_row(s, 0, 1.0, {});
  EXPECT_EQ(r.theta, Vector::Zero(2));
  ASSERT_EQ(r.flags.size(), 1u);
  EXPECT_EQ(r.flags[0], "empty-support");
  const auto ci = asymptotic_ci(r, s, 1.0, 0.95);
  EXPECT_FALSE(ci.has_ci());
  EXPECT_EQ(ci.covariance.size(), 0);
}

TEST(Refit, ScalarSolve) {
  Matrix g = Matrix::Identity(3, 3);
  g(1, 1) = 4.0;
  Matrix c = Matrix::Zero(3, 3);
  c(1, 0) = 2.0;  // c_0 has entry 2 at j = 1
  const auto s = make_stats(g, c, 10, 0.5);
  const auto r = refit_row(s, 0, 1.0, {1});
  EXPECT_DOUBLE_EQ(r.theta[1], 1.0);
  EXPECT_EQ(r.theta[0], 0.0);
  EXPECT_EQ(r.theta[2], 0.0);
}

TEST(Refit, FullSupportIsStationaryPoint) {
  Matrix g(2, 2);
  g << 3, 1, 1, 2;
  Matrix c(2, 2);
  c << 1, 4, -2, 5;
  const auto s = make_stats(g, c, 50, 0.2);
  const auto r = refit_row(s, 1, 0.7, {0, 1});
  const Vector direct = (s.delta * g).inverse() * s.c(1);
  EXPECT_LT((r.theta - direct).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_LE(gradient_psi(s, 1, 0.7, r.theta).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE(r.score_sup, 1e-8);
}

TEST(Refit, RestrictedScoreVanishes) {
  RandomStream rng(9, Stream::kTest);
  Matrix m(6, 6);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  Matrix c(6, 6);
  for (Eigen::Index k = 0; k < c.size(); ++k) c.data()[k] = rng.normal();
  const auto s = make_stats(m * m.transpose() * 100.0, c * 50.0, 1000, 0.01);
  const auto r = refit_row(s, 3, 0.25, {0, 2, 5});
  const Vector psi = gradient_psi(s, 3, 0.25, r.theta);
  for (auto j : IndexSet{0, 2, 5}) EXPECT_LE(std::abs(psi[static_cast<Eigen::Index>(j)]), 1e-8);
  for (auto j : IndexSet{1, 3, 4}) EXPECT_EQ(r.theta[static_cast<Eigen::Index>(j)], 0.0);
}

TEST(Refit, SingularRejected) {
  Matrix g(2, 2);
  g << 1, 2, 2, 4;
  const auto s = make_stats(g, Matrix::Ones(2, 2), 10, 0.1);
  try {
    refit_row(s, 0, 1.0, {0, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRefitSingular);
  }
  EXPECT_THROW(refit_row(s, 0, 1.0, {2}), Error);
  EXPECT_THROW(refit_row(s, 0, 1.0, {1, 0}), Error);
}

TEST(Ci, IdentityHalfwidth) {
  // V_TT = G_TT / (n sigma2) = I and T_n = n delta = 100
  const std::size_t n = 1000;
  const double delta = 0.1, sigma2 = 2.0;
  const auto s = make_stats(Matrix::Identity(2, 2) * (static_cast<double>(n) * sigma2), Matrix::Zero(2, 2), n, delta);
  const auto r = asymptotic_ci(refit_row(s, 0, sigma2, {0, 1}), s, sigma2, 0.95);
  ASSERT_TRUE(r.has_ci());
  for (Eigen::Index k = 0; k < 2; ++k) {
    EXPECT_NEAR(r.ci_hi[k] - r.theta[k], 0.1959963984540054, 1e-12);
    EXPECT_NEAR(r.theta[k] - r.ci_lo[k], 0.1959963984540054, 1e-12);
  }
  // doubling T_n shrinks the halfwidth by sqrt(2)
  const auto s2 = make_stats(s.gram, s.cross, n, 2 * delta);
  const auto r2 = asymptotic_ci(refit_row(s2, 0, sigma2, {0, 1}), s2, sigma2, 0.95);
  EXPECT_NEAR((r.ci_hi[0] - r.ci_lo[0]) / (r2.ci_hi[0] - r2.ci_lo[0]), std::sqrt(2.0), 1e-12);
  EXPECT_THROW(asymptotic_ci(r, s, sigma2, 1.0), Error);
}

TEST(HessianGap, Basics) {
  Matrix g(3, 3);
  g << 4, 1, 0, 1, 3, 1, 0, 1, 2;
  const auto s = make_stats(g, Matrix::Zero(3, 3), 10, 0.1);
  const IndexSet t{0, 2};
  const Matrix v = q_estimate(s, 0.5, t).v_tt;
  EXPECT_EQ(hessian_gap(s, 0.5, t, v), 0.0);
  Matrix shifted = v;
  shifted(1, 0) += 0.1;
  EXPECT_NEAR(hessian_gap(s, 0.5, t, shifted), 0.1, 1e-15);
  EXPECT_THROW(hessian_gap(s, 0.5, t, Matrix::Zero(3, 3)), Error);
}

TEST(SelectionJson, Fields) {
  Matrix g = Matrix::Identity(2, 2) * 100.0;
  Matrix c = Matrix::Ones(2, 2);
  const auto s = make_stats(g, c, 100, 0.1);
  const auto r = asymptotic_ci(refit_row(s, 0, 1.0, {1}), s, 1.0, 0.9);
  const Json j = Json::parse(to_json(r).dump());
  EXPECT_EQ(j.at("i").get<std::size_t>(), 0u);
  EXPECT_EQ(j.at("support").get<IndexSet>(), (IndexSet{1}));
  EXPECT_EQ(j.at("theta2").size(), 1u);
  EXPECT_EQ(j.at("se").size(), 1u);
  EXPECT_EQ(j.at("ci").size(), 1u);
  EXPECT_TRUE(j.at("flags").empty());
}
