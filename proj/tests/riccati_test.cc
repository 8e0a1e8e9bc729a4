#include "daempc/riccati.h"

#include <cmath>

#include <gtest/gtest.h>

#include "daempc/errors.h"
#include "systems.h"
#include "test_util.h"

namespace daempc {
namespace {

using test::Mat;

LqData Scalar(double a, double b, double q, double h, double r) {
  return LqData{Mat(1, 1, {a}), Mat(1, 1, {b}), Mat(1, 1, {q}),
                Mat(1, 1, {h}), Mat(1, 1, {r})};
}

// Random problem with a positive definite cost, which satisfies every
// standing assumption as long as (A, B) is stabilizable (generic here).
LqData RandomLq(test::Gen& gen) {
  const int n = gen.Int(1, 6);
  const int m = gen.Int(1, 3);
  LqData lq;
  lq.A = gen.Gaussian(n, n);
  lq.B = gen.Gaussian(n, m);
  const Matrix S = gen.Spd(n + m, 0.1);
  lq.Q = S.topLeftCorner(n, n);
  lq.H = S.topRightCorner(n, m);
  lq.R = S.bottomRightCorner(m, m);
  return lq;
}

TEST(SolveCareTest, StableUncontrolledScalar) {
  const auto sol = SolveCare(Scalar(-1, 0, 1, 0, 1));
  EXPECT_NEAR(sol.P_hat(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(sol.K_gain(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(sol.lambda_min, 0.5, 1e-12);
}

TEST(SolveCareTest, IntegratorScalar) {
  const auto sol = SolveCare(Scalar(0, 1, 1, 0, 1));
  EXPECT_NEAR(sol.P_hat(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(sol.K_gain(0, 0), 1.0, 1e-12);
}

TEST(SolveCareTest, CrossTermScalar) {
  // a=1, b=1, q=2, h=1, r=1: 2p + 2 - (p+1)^2 = 1 - p^2 = 0; the
  // stabilizing root p = 1 gives k = 2 and a - b k = -1.
  const auto sol = SolveCare(Scalar(1, 1, 2, 1, 1));
  EXPECT_NEAR(sol.P_hat(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(sol.K_gain(0, 0), 2.0, 1e-12);
}

TEST(SolveCareTest, FiveStateSystem) {
  const auto red = BuildReducedOde(test::FiveStateSystem(),
                                   test::FiveStateBox(), Matrix::Identity(6, 6));
  const auto sol = SolveCare(red);
  // Second mode: dz/dt = v1 + v2 with unit weights gives 1 - 2 p^2 = 0.
  const Vector eig = SymEigvals(sol.P_hat);
  EXPECT_NEAR(eig(0), 0.5, 1e-10);
  EXPECT_NEAR(eig(1), 1.0 / std::sqrt(2.0), 1e-10);
  EXPECT_LT(sol.residual_norm, 1e-12);
  EXPECT_TRUE(CertifyClosedLoop(red, sol));
  // The closed loop of the second mode is -2p = -sqrt(2).
  const Matrix Acl = red.A_hat - red.B_hat * sol.K_gain;
  EXPECT_NEAR(Acl.trace(), -1.0 - std::sqrt(2.0), 1e-10);
}

TEST(SolveCareTest, EmptyState) {
  LqData lq{Matrix(0, 0), Matrix(0, 2), Matrix(0, 0), Matrix(0, 2),
            Matrix::Identity(2, 2)};
  const auto sol = SolveCare(lq);
  EXPECT_EQ(sol.P_hat.size(), 0);
  EXPECT_EQ(sol.K_gain.rows(), 2);
  EXPECT_EQ(sol.K_gain.cols(), 0);
}

TEST(SolveCareTest, UnstableUncontrollableFails) {
  EXPECT_THROW(SolveCare(Scalar(1, 0, 1, 0, 1)), NumericalError);
}

TEST(SolveCareTest, SingularRFails) {
  EXPECT_THROW(SolveCare(Scalar(-1, 1, 1, 0, 0)), NumericalError);
}

TEST(SolveCareTest, RandomResidualProperty) {
  test::Gen gen(7);
  for (int trial = 0; trial < 100; ++trial) {
    const LqData lq = RandomLq(gen);
    RiccatiSolution sol;
    ASSERT_NO_THROW(sol = SolveCare(lq)) << "trial " << trial;
    const double pn = sol.P_hat.norm();
    EXPECT_LE(CareResidual(lq, sol.P_hat), 1e-9 * (1 + pn) * (1 + pn))
        << "trial " << trial;
    EXPECT_GT(sol.lambda_min, 0.0);
    EXPECT_EQ((sol.P_hat - sol.P_hat.transpose()).norm(), 0.0);
    EXPECT_TRUE(CertifyClosedLoop(lq, sol));
  }
}

TEST(SolveCareTest, NewtonFromPerturbedStartReturns) {
  test::Gen gen(11);
  for (int trial = 0; trial < 20; ++trial) {
    const LqData lq = RandomLq(gen);
    const auto sol = SolveCare(lq);
    const Matrix P = RefineCare(lq, 1.5 * sol.P_hat, 60);
    EXPECT_LE((P - sol.P_hat).norm(), 1e-8 * (1 + sol.P_hat.norm()))
        << "trial " << trial;
  }
}

TEST(SolveCareTest, OptimalCostOracle) {
  // Hand oracle: for diagonal A, Q, R with B = I the equation decouples into
  // scalars r^{-1} p^2 - 2 a p - q = 0.
  const Vector a = (Vector(3) << -2.0, 0.5, 3.0).finished();
  const Vector q = (Vector(3) << 1.0, 4.0, 0.25).finished();
  const Vector r = (Vector(3) << 2.0, 1.0, 0.5).finished();
  LqData lq{a.asDiagonal(), Matrix::Identity(3, 3), q.asDiagonal(),
            Matrix::Zero(3, 3), r.asDiagonal()};
  const auto sol = SolveCare(lq);
  for (int i = 0; i < 3; ++i) {
    const double p = r(i) * (a(i) + std::sqrt(a(i) * a(i) + q(i) / r(i)));
    EXPECT_NEAR(sol.P_hat(i, i), p, 1e-11 * (1 + p));
  }
}

TEST(CheckAssumptionsTest, FiveStateSystemPasses) {
  const auto red = BuildReducedOde(test::FiveStateSystem(),
                                   test::FiveStateBox(), Matrix::Identity(6, 6));
  const auto rep = CheckAssumptions(red);
  EXPECT_TRUE(rep.s_psd);
  EXPECT_TRUE(rep.stabilizable);
  EXPECT_TRUE(rep.r_pd);
  EXPECT_TRUE(rep.observable);
  EXPECT_TRUE(rep.rank_match);
  EXPECT_TRUE(rep.AllPass());
  EXPECT_EQ(rep.rank_S, 4);
}

TEST(CheckAssumptionsTest, UnstableUncontrollable) {
  const auto rep = CheckAssumptions(Scalar(1, 0, 1, 0, 1));
  EXPECT_FALSE(rep.stabilizable);
  EXPECT_TRUE(rep.r_pd);
  EXPECT_FALSE(rep.AllPass());
  EXPECT_FALSE(rep.details.empty());
}

TEST(CheckAssumptionsTest, ZeroR) {
  const auto rep = CheckAssumptions(Scalar(-1, 1, 1, 0, 0));
  EXPECT_FALSE(rep.r_pd);
  EXPECT_FALSE(rep.AllPass());
}

TEST(CheckAssumptionsTest, IndefiniteCost) {
  const auto rep = CheckAssumptions(Scalar(-1, 1, -1, 0, 1));
  EXPECT_FALSE(rep.s_psd);
}

TEST(CheckAssumptionsTest, UnobservableMode) {
  // Second state is invisible in Q and decoupled.
  LqData lq{Mat(2, 2, {-1, 0, 0, -2}), Mat(2, 1, {1, 1}),
            Mat(2, 2, {1, 0, 0, 0}), Matrix::Zero(2, 1), Mat(1, 1, {1})};
  const auto rep = CheckAssumptions(lq);
  EXPECT_FALSE(rep.observable);
  EXPECT_EQ(rep.observability_rank, 1);
  EXPECT_TRUE(rep.rank_match);
}

TEST(CheckAssumptionsTest, RankMismatchWithCrossTerm) {
  // S = [1 1; 1 1] has rank one while Q and R each have rank one.
  const auto rep = CheckAssumptions(Scalar(-1, 1, 1, 1, 1));
  EXPECT_TRUE(rep.s_psd);
  EXPECT_FALSE(rep.rank_match);
  EXPECT_EQ(rep.rank_S, 1);
}

TEST(CertifyClosedLoopTest, Examples) {
  RiccatiSolution zero;
  zero.K_gain = Mat(1, 1, {0});
  EXPECT_FALSE(CertifyClosedLoop(Scalar(1, 1, 1, 0, 1), zero));
  RiccatiSolution small;
  small.K_gain = Mat(1, 1, {0.1});
  EXPECT_TRUE(CertifyClosedLoop(Scalar(-1, 1, 1, 0, 1), small));
}

}  // namespace
}  // namespace daempc
