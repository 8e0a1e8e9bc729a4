#include "daempc/regularize.h"

#include <cmath>

#include <gtest/gtest.h>

#include "daempc/errors.h"
#include "systems.h"
#include "test_util.h"

namespace daempc {
namespace {

using test::Gen;
using test::Mat;

// Coefficient-wise residual of [sE - A, -B] T = U(s) [0; sE_r - A_r, -B_r].
double IdentityResidual(const DaeSystem& sys, const UnimodularRegularization& u) {
  const Eigen::Index l = sys.rows(), n = sys.states(), m = sys.inputs();
  const Eigen::Index k = l - u.r, w = u.B_r.cols();
  Matrix Ee = Matrix::Zero(l, n + m), Ae(l, n + m);
  Ee.leftCols(n) = sys.E;
  Ae << sys.A, sys.B;
  Matrix Er = Matrix::Zero(l, u.r + w), Ar = Matrix::Zero(l, u.r + w);
  Er.block(k, 0, u.r, u.r) = u.E_r;
  Ar.block(k, 0, u.r, u.r) = u.A_r;
  Ar.block(k, u.r, u.r, w) = u.B_r;
  return std::max({(u.U1 * Er).norm(),
                   (u.U0 * Er - u.U1 * Ar - Ee * u.T_hat).norm(),
                   (u.U0 * Ar - Ae * u.T_hat).norm()});
}

TEST(VerifyUnimodularTest, Examples) {
  EXPECT_TRUE(VerifyUnimodular(-Matrix::Identity(2, 2), Mat(2, 2, {0, 1, 0, 0})));
  EXPECT_FALSE(VerifyUnimodular(Matrix::Zero(2, 2), Matrix::Identity(2, 2)));
  EXPECT_FALSE(VerifyUnimodular(Matrix::Identity(2, 2), Matrix::Identity(2, 2)));
}

TEST(FeedbackRegularizeTest, IdentityAcceptsZeroGain) {
  Gen g(21);
  const DaeSystem s{Matrix::Identity(3, 3), g.Gaussian(3, 3), g.Gaussian(3, 2)};
  const auto f = FeedbackRegularize(s, 0);
  EXPECT_EQ(f.K.norm(), 0.0);
  EXPECT_EQ(f.seed_used, -1);
}

TEST(FeedbackRegularizeTest, IndexOneAcceptsZeroGain) {
  const DaeSystem s{Mat(2, 2, {1, 0, 0, 0}), Mat(2, 2, {-1, 0, 0, 1}),
                    Mat(2, 1, {1, 1})};
  EXPECT_EQ(FeedbackRegularize(s, 0).K.norm(), 0.0);
}

TEST(FeedbackRegularizeTest, IndexTwoBecomesIndexOne) {
  const DaeSystem s{Mat(2, 2, {1, 0, 0, 0}), Mat(2, 2, {0, 1, 1, 0}),
                    Mat(2, 1, {0, 1})};
  EXPECT_EQ(PencilIndex(s.E, s.A), 2);
  const auto f = FeedbackRegularize(s, 7);
  EXPECT_GE(f.seed_used, 7);
  EXPECT_TRUE(IsRegular(f.regularized));
  EXPECT_LE(PencilIndex(f.regularized.E, f.regularized.A), 1);
  // K vanishes on the range of E^T.
  EXPECT_LT((f.K * Mat(2, 1, {1, 0})).norm(), 1e-14);
}

TEST(FeedbackRegularizeTest, RejectsSingular) {
  EXPECT_THROW(FeedbackRegularize(test::FiveStateSystem(), 0), StructuralError);
  EXPECT_THROW(FeedbackRegularize(test::NilpotentSystem(), 0), StructuralError);
}

TEST(UnimodularRegularizeTest, NilpotentSystem) {
  const DaeSystem s = test::NilpotentSystem();
  const auto u = UnimodularRegularize(s);
  EXPECT_EQ(u.r, 2);
  EXPECT_EQ(u.B_r.cols(), 0);
  EXPECT_EQ(NumericalRank(u.E_r), 0);
  EXPECT_TRUE(IsRegular(u.E_r, u.A_r));
  EXPECT_LE(PencilIndex(u.E_r, u.A_r), 1);
  EXPECT_TRUE(VerifyUnimodular(u.U0, u.U1));
  EXPECT_LT(IdentityResidual(s, u), 1e-10);
  // U(s) carries the degree-one part: U1 != 0.
  EXPECT_GT(u.U1.norm(), 0.5);
}

TEST(UnimodularRegularizeTest, FreeVariableSystem) {
  const DaeSystem s = test::FreeVariableSystem();
  const auto u = UnimodularRegularize(s);
  EXPECT_EQ(u.r, 3);
  EXPECT_EQ(u.B_r.cols(), 1);
  EXPECT_EQ(NumericalRank(u.E_r), 1);
  EXPECT_LE(PencilIndex(u.E_r, u.A_r), 1);
  EXPECT_TRUE(VerifyUnimodular(u.U0, u.U1));
  EXPECT_LT(IdentityResidual(s, u), 1e-10);
}

TEST(UnimodularRegularizeTest, OdeIsUntouched) {
  Gen g(22);
  const DaeSystem s{Matrix::Identity(3, 3), g.Gaussian(3, 3), g.Gaussian(3, 1)};
  const auto u = UnimodularRegularize(s);
  EXPECT_EQ(u.T_hat, Matrix::Identity(4, 4));
  EXPECT_EQ(u.U0, Matrix::Identity(3, 3));
  EXPECT_EQ(u.U1.norm(), 0.0);
  EXPECT_EQ(u.E_r, s.E);
  EXPECT_EQ(u.A_r, s.A);
  EXPECT_EQ(u.B_r, s.B);
}

TEST(UnimodularRegularizeTest, FiveStateSystem) {
  const DaeSystem s = test::FiveStateSystem();
  const auto u = UnimodularRegularize(s);
  EXPECT_EQ(u.r, 4);
  EXPECT_EQ(u.B_r.cols(), 2);
  EXPECT_EQ(NumericalRank(u.E_r), 2);
  EXPECT_TRUE(VerifyUnimodular(u.U0, u.U1));
  EXPECT_LT(IdentityResidual(s, u), 1e-10);
}

TEST(UnimodularRegularizeTest, RandomlyTransformedSystems) {
  Gen g(23);
  const std::vector<DaeSystem> bases = {test::FiveStateSystem(),
                                        test::FreeVariableSystem(),
                                        test::NilpotentSystem(),
                                        test::SingleEquationSystem()};
  for (const DaeSystem& b : bases) {
    for (int trial = 0; trial < 5; ++trial) {
      const Matrix P = g.Invertible(b.rows());
      const Matrix Q = g.Invertible(b.states());
      const DaeSystem s{P * b.E * Q, P * b.A * Q, P * b.B};
      const auto u = UnimodularRegularize(s);
      EXPECT_TRUE(VerifyUnimodular(u.U0, u.U1));
      EXPECT_LT(IdentityResidual(s, u), 1e-9 * (1 + u.T_hat.norm()));
      EXPECT_TRUE(IsRegular(u.E_r, u.A_r));
      EXPECT_LE(PencilIndex(u.E_r, u.A_r), 1);
    }
  }
}

TEST(Index1ToOdeTest, Identity) {
  const DaeSystem s{Matrix::Identity(3, 3), Matrix::Zero(3, 3), Matrix(3, 0)};
  const auto f = Index1ToOde(s);
  EXPECT_EQ(f.n_hat, 3);
  EXPECT_EQ(f.A22.size(), 0);
  EXPECT_LT((f.S_r * s.E * f.T_r - Matrix::Identity(3, 3)).norm(), 1e-14);
}

TEST(Index1ToOdeTest, PurelyAlgebraic) {
  const DaeSystem s{Matrix::Zero(2, 2), Matrix::Identity(2, 2), Matrix(2, 0)};
  const auto f = Index1ToOde(s);
  EXPECT_EQ(f.n_hat, 0);
  EXPECT_EQ(f.A22.rows(), 2);
  EXPECT_EQ(NumericalRank(f.A22), 2);
}

TEST(Index1ToOdeTest, RejectsIndexTwo) {
  EXPECT_THROW(Index1ToOde(test::NilpotentSystem()), StructuralError);
}

TEST(Index1ToOdeTest, RandomIndexOne) {
  Gen g(24);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 4, nh = g.Int(0, 4);
    Matrix E0 = Matrix::Zero(n, n);
    E0.topLeftCorner(nh, nh).setIdentity();
    Matrix A0 = g.Gaussian(n, n);
    A0.bottomRightCorner(n - nh, n - nh) += 3.0 * Matrix::Identity(n - nh, n - nh);
    const Matrix P = g.Invertible(n), Q = g.Invertible(n);
    const DaeSystem s{P * E0 * Q, P * A0 * Q, g.Gaussian(n, 2)};
    const auto f = Index1ToOde(s);
    EXPECT_EQ(f.n_hat, nh);
    Matrix target = Matrix::Zero(n, n);
    target.topLeftCorner(nh, nh).setIdentity();
    EXPECT_LT((f.S_r * s.E * f.T_r - target).norm(), 1e-10);
  }
}

TEST(BuildReducedOdeTest, IdentityReduction) {
  Gen g(25);
  const DaeSystem s{Matrix::Identity(2, 2), g.Gaussian(2, 2), g.Gaussian(2, 1)};
  const auto red = BuildReducedOde(s, test::NoConstraints(2, 1),
                                   Matrix::Identity(3, 3));
  EXPECT_EQ(red.route, RegularizationRoute::kFeedback);
  EXPECT_EQ(red.n_hat, 2);
  EXPECT_EQ(red.m_hat, 1);
  EXPECT_LT((red.X - Matrix::Identity(3, 3)).norm(), 1e-12);
  EXPECT_LT((red.A_hat - s.A).norm(), 1e-12);
  EXPECT_LT((red.B_hat - s.B).norm(), 1e-12);
  EXPECT_LT((red.Q_hat - Matrix::Identity(2, 2)).norm(), 1e-12);
  EXPECT_LT(red.H_hat.norm(), 1e-12);
  EXPECT_LT((red.R_hat - Matrix::Identity(1, 1)).norm(), 1e-12);
}

TEST(BuildReducedOdeTest, FiveStateSystem) {
  const DaeSystem s = test::FiveStateSystem();
  const auto red = BuildReducedOde(s, test::FiveStateBox(), Matrix::Identity(6, 6));
  EXPECT_EQ(red.route, RegularizationRoute::kUnimodular);
  EXPECT_EQ(red.n_hat, 2);
  EXPECT_EQ(red.m_hat, 2);
  // In the canonical coordinates z1 = (x3, x5) and A_hat = diag(-1, 0).
  EXPECT_LT((red.A_hat - Matrix(Eigen::Vector2d(-1, 0).asDiagonal())).norm(), 1e-10);
  Matrix xz = red.X.topRows(5).leftCols(2);
  EXPECT_LT((xz.row(2) - Mat(1, 2, {1, 0})).norm(), 1e-10);
  EXPECT_LT((xz.row(4) - Mat(1, 2, {0, 1})).norm(), 1e-10);
  // x1 = x2 = 0 on every lifted trajectory.
  EXPECT_LT(red.X.row(0).norm(), 1e-10);
  EXPECT_LT(red.X.row(1).norm(), 1e-10);
  // B_hat = [0 0; * *]: the mode at -1 is uncontrolled but stable, the
  // integrator is controlled.
  EXPECT_EQ(NumericalRank(red.B_hat), 1);
  EXPECT_LT(red.B_hat.row(0).norm(), 1e-10);
  // Initial selector picks (x3, x5) from E x.
  Eigen::VectorXd x0(5);
  x0 << 0, 0, -0.9, 0.3, -0.55;
  const Vector z0 = InitialReducedState(red, x0);
  EXPECT_LT((z0 - Eigen::Vector2d(-0.9, -0.55)).norm(), 1e-12);
  EXPECT_TRUE(IsWeaklyConsistent(s, red, x0));
  EXPECT_EQ(red.constraint_rows.rows(), 12);
}

TEST(BuildReducedOdeTest, FreeVariableSystem) {
  const auto red = BuildReducedOde(test::FreeVariableSystem(),
                                   test::NoConstraints(3, 1), Matrix::Identity(4, 4));
  EXPECT_EQ(red.n_hat, 1);
  EXPECT_NEAR(red.A_hat(0, 0), 0.0, 1e-12);
  EXPECT_EQ(NumericalRank(red.B_hat), 1);
}

TEST(BuildReducedOdeTest, NilpotentSystemHasEmptyReducedState) {
  const DaeSystem s = test::NilpotentSystem();
  const auto red = BuildReducedOde(s, test::NoConstraints(2, 0),
                                   Matrix::Identity(2, 2));
  EXPECT_EQ(red.route, RegularizationRoute::kUnimodular);
  EXPECT_EQ(red.n_hat, 0);
  EXPECT_EQ(red.m_hat, 0);
  EXPECT_TRUE(IsWeaklyConsistent(s, red, Vector::Zero(2)));
  EXPECT_FALSE(IsWeaklyConsistent(s, red, Eigen::Vector2d(0.0, 1.0)));
}

TEST(BuildReducedOdeTest, SingleEquationSystem) {
  const auto red = BuildReducedOde(test::SingleEquationSystem(),
                                   test::NoConstraints(2, 1), Matrix::Identity(3, 3));
  // The free variable becomes a second input of a one-state integrator.
  EXPECT_EQ(red.n_hat, 1);
  EXPECT_EQ(red.m_hat, 2);
  EXPECT_NEAR(red.A_hat(0, 0), 0.0, 1e-12);
}

TEST(LiftTrajectoryTest, ZeroPath) {
  const auto red = BuildReducedOde(test::FiveStateSystem(), test::FiveStateBox(),
                                   Matrix::Identity(6, 6));
  const auto [x, u] = LiftTrajectory(red, Matrix::Zero(2, 5), Matrix::Zero(2, 5));
  EXPECT_EQ(x.norm(), 0.0);
  EXPECT_EQ(u.norm(), 0.0);
  EXPECT_THROW(LiftTrajectory(red, Matrix::Zero(2, 5), Matrix::Zero(2, 4)),
               DimensionError);
}

// Exact reduced solution for piecewise-constant v, lifted, then checked
// against the DAE with forward differences inside each constant piece.
double LiftedDaeResidual(const DaeSystem& s, const ReducedOde& red,
                         const Vector& z0, const Matrix& pieces, double h,
                         int steps_per_piece) {
  const Eigen::Index nh = red.n_hat, mh = red.m_hat;
  Matrix aug = Matrix::Zero(nh + mh, nh + mh);
  aug.topLeftCorner(nh, nh) = red.A_hat;
  aug.topRightCorner(nh, mh) = red.B_hat;
  const Matrix Phi = Expm(aug * h);
  double worst = 0.0;
  Vector z = z0;
  for (Eigen::Index p = 0; p < pieces.cols(); ++p) {
    const Vector v = pieces.col(p);
    for (int k = 0; k < steps_per_piece; ++k) {
      Vector zv(nh + mh);
      zv << z, v;
      const Vector next = (Phi * zv).head(nh);
      Vector zv1(nh + mh);
      zv1 << next, v;
      const Vector xu0 = red.X * zv, xu1 = red.X * zv1;
      const Vector x0 = xu0.head(s.states()), x1 = xu1.head(s.states());
      const Vector u0 = xu0.tail(s.inputs());
      const Vector res = s.E * (x1 - x0) / h - s.A * x0 - s.B * u0;
      worst = std::max(worst, res.norm());
      z = next;
    }
  }
  return worst;
}

TEST(LiftTrajectoryTest, LiftedPathsSolveTheDae) {
  Gen g(26);
  const std::vector<DaeSystem> systems = {test::FiveStateSystem(),
                                          test::FreeVariableSystem(),
                                          test::SingleEquationSystem()};
  for (const DaeSystem& s : systems) {
    const Eigen::Index nm = s.states() + s.inputs();
    const auto red = BuildReducedOde(s, test::NoConstraints(s.states(), s.inputs()),
                                     Matrix::Identity(nm, nm));
    for (int trial = 0; trial < 100 / 3; ++trial) {
      const Vector z0 = g.GaussianVec(red.n_hat);
      const Matrix pieces = g.Gaussian(red.m_hat, 3);
      const double r1 = LiftedDaeResidual(s, red, z0, pieces, 0.01, 10);
      const double r2 = LiftedDaeResidual(s, red, z0, pieces, 0.005, 20);
      EXPECT_LE(r1, 5.0 * 0.01 * (1 + z0.norm() + pieces.norm()));
      if (r1 > 1e-8) {
        EXPECT_NEAR(r1 / r2, 2.0, 0.5);
      }
    }
  }
}

TEST(ReducedCostTest, LiftedCostEqualsReducedCost) {
  Gen g(27);
  const DaeSystem s = test::FiveStateSystem();
  Matrix G = g.Gaussian(6, 6);
  const Matrix S = G * G.transpose();
  const auto red = BuildReducedOde(s, test::FiveStateBox(), S);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix Z = g.Gaussian(2, 50), V = g.Gaussian(2, 50);
    const auto [x, u] = LiftTrajectory(red, Z, V);
    double dae = 0.0, ode = 0.0;
    for (int k = 0; k < 50; ++k) {
      Vector xu(6), zv(4);
      xu << x.col(k), u.col(k);
      zv << Z.col(k), V.col(k);
      dae += xu.dot(S * xu);
      ode += zv.dot(red.S_hat * zv);
    }
    EXPECT_NEAR(dae, ode, 1e-8 * std::max(1.0, std::abs(dae)));
  }
}

TEST(ReducedCostTest, InitSelectorInvertsLift) {
  for (const DaeSystem& s : {test::FiveStateSystem(), test::FreeVariableSystem()}) {
    const Eigen::Index nm = s.states() + s.inputs();
    const auto red = BuildReducedOde(s, test::NoConstraints(s.states(), s.inputs()),
                                     Matrix::Identity(nm, nm));
    const Matrix comp = red.init_selector * red.X.leftCols(red.n_hat);
    EXPECT_LT((comp - Matrix::Identity(red.n_hat, red.n_hat)).norm(), 1e-10);
    EXPECT_LT((red.X_left_inverse * red.X -
               Matrix::Identity(red.n_hat + red.m_hat, red.n_hat + red.m_hat)).norm(),
              1e-10);
  }
}

TEST(StateFromMeasurementTest, ReproducesMeasurement) {
  const DaeSystem s = test::FiveStateSystem();
  const Vector ex = (Vector(5) << 0, 0, 0, -0.9, -0.55).finished();
  const Vector x0 = StateFromMeasurement(s, ex);
  EXPECT_LT((s.E * x0 - ex).norm(), 1e-14);
  EXPECT_NEAR(x0(2), -0.9, 1e-14);
  EXPECT_NEAR(x0(4), -0.55, 1e-14);
  // Minimum norm: directions in ker E stay at zero.
  EXPECT_NEAR(x0(1), 0.0, 1e-14);
  EXPECT_NEAR(x0(3), 0.0, 1e-14);
}

TEST(StateFromMeasurementTest, RandomRangeVectors) {
  test::Gen gen(23);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = gen.Int(2, 6);
    const int r = gen.Int(1, n);
    const Matrix E = gen.Gaussian(n, r) * gen.Gaussian(r, n);
    DaeSystem s;
    s.E = E;
    s.A = gen.Gaussian(n, n);
    s.B = gen.Gaussian(n, 1);
    const Vector ex = E * gen.GaussianVec(n);
    const Vector x0 = StateFromMeasurement(s, ex);
    EXPECT_LT((E * x0 - ex).norm(), 1e-9 * std::max(1.0, ex.norm()));
  }
}

TEST(StateFromMeasurementTest, Rejects) {
  const DaeSystem s = test::FiveStateSystem();
  EXPECT_THROW(StateFromMeasurement(s, Vector::Zero(4)), DimensionError);
  // Row 0 of E is zero, so a nonzero first entry is outside range(E).
  EXPECT_THROW(StateFromMeasurement(s, Vector::Unit(5, 0)), DimensionError);
}

}  // namespace
}  // namespace daempc
