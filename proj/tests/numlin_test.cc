#include "daempc/numlin.h"

#include <cmath>

#include <gtest/gtest.h>

#include "daempc/errors.h"
#include "test_util.h"

namespace daempc {
namespace {

using Eigen::Vector2d;
using test::Gen;

TEST(RankDecomposeTest, Identity) {
  const auto d = RankDecompose(Matrix::Identity(3, 3));
  EXPECT_EQ(d.rank, 3);
  EXPECT_EQ(d.null_basis.cols(), 0);
  EXPECT_LT((d.range_basis.transpose() * d.range_basis -
             Matrix::Identity(3, 3)).norm(), 1e-12);
}

TEST(RankDecomposeTest, NilpotentShift) {
  Matrix E(2, 2);
  E << 0, 1, 0, 0;
  const auto d = RankDecompose(E);
  EXPECT_EQ(d.rank, 1);
  ASSERT_EQ(d.null_basis.cols(), 1);
  EXPECT_NEAR(std::abs(d.null_basis(0, 0)), 1.0, 1e-12);
  EXPECT_NEAR(d.null_basis(1, 0), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(d.range_basis(0, 0)), 1.0, 1e-12);
}

TEST(RankDecomposeTest, LowRankProduct) {
  Gen g(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix M = g.Gaussian(5, 2) * g.Gaussian(2, 3);
    for (const Matrix& X : {M, Matrix(M.transpose())}) {
      const auto d = RankDecompose(X);
      EXPECT_EQ(d.rank, 2);
      EXPECT_EQ(d.null_basis.cols(), X.cols() - 2);
      EXPECT_EQ(d.left_null_basis.cols(), X.rows() - 2);
      const Matrix P = d.range_basis * d.range_basis.transpose();
      EXPECT_LT((P * X - X).norm(), 1e-10 * X.norm());
      EXPECT_LT((X * d.null_basis).norm(), d.threshold * X.norm() + 1e-14);
      EXPECT_LT((d.range_basis.transpose() * d.left_null_basis).norm(), 1e-12);
      EXPECT_LT((d.null_basis.transpose() * d.corange_basis).norm(), 1e-12);
      for (int i = 0; i + 1 < d.singular_values.size(); ++i) {
        EXPECT_GE(d.singular_values(i), d.singular_values(i + 1));
      }
    }
  }
}

TEST(RankDecomposeTest, EmptyAndZero) {
  const auto e = RankDecompose(Matrix(0, 3));
  EXPECT_EQ(e.rank, 0);
  EXPECT_EQ(e.null_basis.cols(), 3);
  const auto z = RankDecompose(Matrix::Zero(2, 3));
  EXPECT_EQ(z.rank, 0);
  EXPECT_EQ(z.null_basis.cols(), 3);
  EXPECT_EQ(z.left_null_basis.cols(), 2);
}

TEST(RankDecomposeTest, RejectsNonFinite) {
  Matrix M = Matrix::Identity(2, 2);
  M(0, 1) = std::nan("");
  EXPECT_THROW(RankDecompose(M), std::invalid_argument);
}

TEST(RankDecomposeTest, MarginalFlag) {
  Matrix M = Matrix::Identity(2, 2);
  M(1, 1) = 2e-10 * 2.0;  // within a factor 10 of the 2e-10 threshold
  EXPECT_TRUE(RankDecompose(M).marginal);
  EXPECT_FALSE(RankDecompose(Matrix::Identity(2, 2)).marginal);
}

TEST(ExpmTest, ClosedForms) {
  EXPECT_LT((Expm(Matrix::Zero(3, 3)) - Matrix::Identity(3, 3)).norm(), 1e-15);
  Matrix D = Vector2d(-1, 0).asDiagonal();
  Matrix expected = Vector2d(std::exp(-1.0), 1.0).asDiagonal();
  EXPECT_LT((Expm(D) - expected).norm(), 1e-14);
  Matrix N(2, 2);
  N << 0, 1, 0, 0;
  EXPECT_LT((Expm(N) - (Matrix::Identity(2, 2) + N)).norm(), 1e-15);
  EXPECT_THROW(Expm(Matrix::Zero(2, 3)), DimensionError);
}

TEST(ExpmTest, HalfArgumentSquares) {
  Gen g(2);
  for (int trial = 0; trial < 30; ++trial) {
    Matrix M = g.Gaussian(4, 4);
    M *= g.Uniform(0.1, 10.0) / M.norm();
    const Matrix E = Expm(M);
    const Matrix H = Expm(0.5 * M);
    EXPECT_LT((E - H * H).norm() / E.norm(), 1e-12);
  }
}

TEST(ExpmTest, CommutingSum) {
  Gen g(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix C = 0.5 * g.Gaussian(3, 3);
    const Matrix A = C + 0.3 * C * C;
    const Matrix B = 2.0 * C - 0.1 * C * C * C;
    EXPECT_LT(test::RelErr(Expm(A + B), Expm(A) * Expm(B)), 1e-10);
  }
}

TEST(LyapunovTest, ClosedForms) {
  Matrix Y = SolveLyapunov(-Matrix::Identity(2, 2), 2 * Matrix::Identity(2, 2));
  EXPECT_LT((Y - Matrix::Identity(2, 2)).norm(), 1e-14);
  Y = SolveLyapunov(Vector2d(-1, -2).asDiagonal(), Matrix::Identity(2, 2));
  EXPECT_LT((Y - Matrix(Vector2d(0.5, 0.25).asDiagonal())).norm(), 1e-14);
}

TEST(LyapunovTest, RandomStableResidual) {
  Gen g(4);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix A = g.Hurwitz(4);
    const Matrix W = g.Spd(4);
    const Matrix Y = SolveLyapunov(A, W);
    const Matrix R = A.transpose() * Y + Y * A + W;
    EXPECT_LE(R.norm(), 1e-10 * (A.norm() * Y.norm() + W.norm()));
    EXPECT_LE((Y - Y.transpose()).norm(), 1e-12);
    EXPECT_GT(SymEigvals(Y)(0), 0.0);
  }
}

TEST(LyapunovTest, Resonant) {
  Matrix A = Vector2d(1, -1).asDiagonal();
  try {
    SolveLyapunov(A, Matrix::Identity(2, 2));
    FAIL() << "expected throw";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("resonant Lyapunov"), std::string::npos);
  }
}

TEST(MatrixSignTest, ClosedForms) {
  Matrix S = MatrixSign(Vector2d(-3, 5).asDiagonal());
  EXPECT_LT((S - Matrix(Vector2d(-1, 1).asDiagonal())).norm(), 1e-13);
  EXPECT_LT((MatrixSign(Matrix::Identity(4, 4)) - Matrix::Identity(4, 4)).norm(),
            1e-15);
}

TEST(MatrixSignTest, Invariants) {
  Gen g(5);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 5;
    const Matrix V = g.Invertible(n);
    Vector d(n);
    for (int i = 0; i < n; ++i) {
      d(i) = (i % 2 == 0 ? 1.0 : -1.0) * g.Uniform(0.2, 5.0);
    }
    const Matrix M = V * d.asDiagonal() * V.inverse();
    const Matrix S = MatrixSign(M);
    EXPECT_LT((S * M - M * S).norm(), 1e-8 * std::max(1.0, M.norm()));
    EXPECT_LT((S * S - Matrix::Identity(n, n)).norm(), 1e-8);
    Vector sd = d.array().sign();
    EXPECT_LT(test::RelErr(S, V * sd.asDiagonal() * V.inverse()), 1e-9);
  }
}

TEST(MatrixSignTest, ImaginaryAxis) {
  Matrix R(2, 2);
  R << 0, 1, -1, 0;
  try {
    MatrixSign(R);
    FAIL() << "expected throw";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("imaginary-axis spectrum"),
              std::string::npos);
  }
}

TEST(SymEigenTest, ClosedForms) {
  Vector v = SymEigvals(Vector2d(0.5, std::sqrt(2.0)).asDiagonal());
  EXPECT_NEAR(v(0), 0.5, 1e-15);
  EXPECT_NEAR(v(1), std::sqrt(2.0), 1e-15);
  v = SymEigvals(Matrix::Identity(3, 3));
  EXPECT_LT((v - Vector::Ones(3)).norm(), 1e-15);
  Matrix M(2, 2);
  M << 2, 1, 1, 2;
  v = SymEigvals(M);
  EXPECT_NEAR(v(0), 1.0, 1e-14);
  EXPECT_NEAR(v(1), 3.0, 1e-14);
}

TEST(SymEigenTest, RandomDecomposition) {
  Gen g(6);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix G = g.Gaussian(6, 6);
    const Matrix M = G + G.transpose();
    const auto e = SymEigen(M);
    EXPECT_LT((e.vectors * e.values.asDiagonal() * e.vectors.transpose() - M).norm(),
              1e-12 * M.norm());
    EXPECT_LT((e.vectors.transpose() * e.vectors - Matrix::Identity(6, 6)).norm(),
              1e-12);
    for (int i = 0; i + 1 < 6; ++i) EXPECT_LE(e.values(i), e.values(i + 1));
  }
}

TEST(SymEigenTest, RejectsAsymmetric) {
  Matrix M(2, 2);
  M << 1, 2, 0, 1;
  EXPECT_THROW(SymEigvals(M), std::invalid_argument);
}

TEST(ProjectEllipsoidTest, ClosedForms) {
  const Vector inside = Vector2d(0.1, 0.2);
  EXPECT_EQ(ProjectEllipsoid(inside, Matrix::Identity(2, 2), 1.0), inside);
  const Vector z = ProjectEllipsoid(Vector2d(2, 0), Matrix::Identity(2, 2), 1.0);
  EXPECT_LT((z - Vector2d(1, 0)).norm(), 1e-12);
}

TEST(ProjectEllipsoidTest, KktPoint) {
  const Matrix P = Vector2d(0.5, std::sqrt(2.0)).asDiagonal();
  const double rho = 0.25;
  const Vector y = Vector2d(2, 2);
  const Vector z = ProjectEllipsoid(y, P, rho);
  // Boundary residual and stationarity: y - z = mu P z with mu > 0.
  EXPECT_NEAR(z.dot(P * z), rho, 1e-10);
  const Vector pz = P * z;
  const double mu = (y - z).dot(pz) / pz.squaredNorm();
  EXPECT_GT(mu, 0.0);
  EXPECT_LT((y - z - mu * pz).norm(), 1e-10);
}

TEST(ProjectEllipsoidTest, NearestAmongSamples) {
  Gen g(7);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix P = g.Spd(3);
    const double rho = g.Uniform(0.1, 2.0);
    const Vector y = 3.0 * g.GaussianVec(3);
    const Vector z = ProjectEllipsoid(y, P, rho);
    EXPECT_LE(z.dot(P * z), rho * (1 + 1e-10));
    const double dist = (y - z).norm();
    for (int k = 0; k < 1000; ++k) {
      // Uniform-ish feasible sample: random direction scaled into the set.
      Vector u = g.GaussianVec(3);
      u *= std::sqrt(rho / u.dot(P * u)) * std::cbrt(g.Uniform(0.0, 1.0));
      EXPECT_LE(dist, (y - u).norm() + 1e-12);
    }
  }
}

TEST(HelpersTest, BlockDiagAndCondition) {
  const Matrix B = BlockDiag({Matrix::Identity(1, 1), Matrix(0, 0),
                              2 * Matrix::Identity(2, 2)});
  EXPECT_EQ(B.rows(), 3);
  EXPECT_DOUBLE_EQ(B(2, 2), 2.0);
  EXPECT_DOUBLE_EQ(ConditionNumber(B), 2.0);
  EXPECT_TRUE(std::isinf(ConditionNumber(Matrix::Zero(2, 2))));
}

}  // namespace
}  // namespace daempc

namespace daempc {
namespace {

TEST(QuadraticIntegralTest, ScalarClosedForm) {
  const Matrix W = QuadraticIntegral(Matrix::Constant(1, 1, -1.0),
                                     Matrix::Constant(1, 1, 3.0), 0.7);
  EXPECT_NEAR(W(0, 0), 3.0 * (1.0 - std::exp(-1.4)) / 2.0, 1e-14);
}

TEST(QuadraticIntegralTest, MatchesSimpsonRule) {
  test::Gen gen(41);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix A = gen.Gaussian(3, 3);
    const Matrix M = gen.Spd(3);
    const double t = gen.Uniform(0.1, 1.0);
    const int K = 2000;
    Matrix oracle = Matrix::Zero(3, 3);
    for (int k = 0; k <= K; ++k) {
      const double w = (k == 0 || k == K) ? 1.0 : (k % 2 ? 4.0 : 2.0);
      const Matrix F = Expm(A * (t * k / K));
      oracle += w * F.transpose() * M * F;
    }
    oracle *= t / (3.0 * K);
    EXPECT_LT(test::RelErr(QuadraticIntegral(A, M, t), oracle), 1e-10);
  }
}

TEST(QuadraticIntegralTest, EmptyAndMismatch) {
  EXPECT_EQ(QuadraticIntegral(Matrix(0, 0), Matrix(0, 0), 1.0).size(), 0);
  EXPECT_THROW(QuadraticIntegral(Matrix::Zero(2, 2), Matrix::Zero(3, 3), 1.0),
               DimensionError);
}

}  // namespace
}  // namespace daempc
