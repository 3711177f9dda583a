#include <gtest/gtest.h>

#include "sparse_drift/rng.hpp"
#include "sparse_drift/simplex.hpp"

using namespace sparse_drift;

TEST(DualSimplex, LowerBoundsOnly) {
  // min x1 + 2 x2  s.t. x1 >= 1, x2 >= 2
  Matrix a(2, 2);
  a << -1, 0, 0, -1;
  const auto res = solve_dual_simplex(a, Vector((Vector(2) << -1, -2).finished()), Vector((Vector(2) << 1, 2).finished()));
  ASSERT_EQ(res.status, LpStatus::kOptimal);
  EXPECT_NEAR(res.x[0], 1.0, 1e-14);
  EXPECT_NEAR(res.x[1], 2.0, 1e-14);
  EXPECT_NEAR(res.objective, 5.0, 1e-14);
}

TEST(DualSimplex, ZeroIsOptimalWhenFeasible) {
  Matrix a(2, 2);
  a << 1, 1, -1, 2;
  const auto res = solve_dual_simplex(a, Vector::Ones(2), Vector::Ones(2));
  ASSERT_EQ(res.status, LpStatus::kOptimal);
  EXPECT_EQ(res.x, Vector::Zero(2));
  EXPECT_EQ(res.pivots, 0u);
}

TEST(DualSimplex, DetectsInfeasible) {
  // x1 + x2 <= -1 has no nonnegative solution
  Matrix a(1, 2);
  a << 1, 1;
  const auto res = solve_dual_simplex(a, Vector::Constant(1, -1.0), Vector::Ones(2));
  EXPECT_EQ(res.status, LpStatus::kInfeasible);
}

TEST(DualSimplex, CoveringProblem) {
  // min x1 + x2 + x3 s.t. x1 + x2 >= 1, x2 + x3 >= 1, x1 + x3 >= 1 -> 1.5
  Matrix a(3, 3);
  a << -1, -1, 0, 0, -1, -1, -1, 0, -1;
  for (auto rule : {PivotRule::kBland, PivotRule::kLargestInfeasibility}) {
    LpOptions opt;
    opt.rule = rule;
    const auto res = solve_dual_simplex(a, Vector::Constant(3, -1.0), Vector::Ones(3), opt);
    ASSERT_EQ(res.status, LpStatus::kOptimal);
    EXPECT_NEAR(res.objective, 1.5, 1e-12);
    EXPECT_LE((a * res.x - Vector::Constant(3, -1.0)).maxCoeff(), 1e-12);
  }
}

TEST(DualSimplex, PivotLimit) {
  Matrix a(3, 3);
  a << -1, -1, 0, 0, -1, -1, -1, 0, -1;
  LpOptions opt;
  opt.max_pivots = 1;
  const auto res = solve_dual_simplex(a, Vector::Constant(3, -1.0), Vector::Ones(3), opt);
  EXPECT_EQ(res.status, LpStatus::kPivotLimit);
}

TEST(DualSimplex, RulesAgreeOnRandomCoveringLps) {
  RandomStream rng(17, Stream::kTest);
  for (int rep = 0; rep < 200; ++rep) {
    const Eigen::Index m = 6, n = 5;
    Matrix a(m, n);
    for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = rng.uniform(-1.0, 1.0);
    Vector r(m), c(n);
    for (Eigen::Index k = 0; k < m; ++k) r[k] = rng.uniform(-1.0, 1.0);
    for (Eigen::Index k = 0; k < n; ++k) c[k] = rng.uniform(0.1, 2.0);
    LpOptions bland, largest;
    largest.rule = PivotRule::kLargestInfeasibility;
    const auto x = solve_dual_simplex(a, r, c, bland);
    const auto y = solve_dual_simplex(a, r, c, largest);
    ASSERT_EQ(x.status, y.status);
    if (x.status == LpStatus::kOptimal) {
      EXPECT_NEAR(x.objective, y.objective, 1e-9 * (1 + std::abs(x.objective)));
      EXPECT_LE((a * x.x - r).maxCoeff(), 1e-9);
      EXPECT_GE(x.x.minCoeff(), -1e-12);
    }
  }
}
