#pragma once

// Dense linear-algebra kernels shared by the structural analysis, the
// Riccati solver and the OCP solver. Everything here is a pure function of
// its arguments.

#include <vector>

#include <Eigen/Dense>

namespace daempc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Numerical rank rule: a singular value counts when it exceeds
/// rtol * max(sigma_max, scale) * max(rows, cols). A positive `scale` pins
/// the reference magnitude when M is a projected or deflated piece of a
/// larger matrix whose own largest singular value may be pure roundoff.
struct RankTolerance {
  double rtol = 1e-10;
  double scale = 0.0;
};

struct RankDecomposition {
  int rank = 0;
  /// Orthonormal basis of the column space (rows x rank).
  Matrix range_basis;
  /// Orthonormal basis of the kernel (cols x (cols - rank)).
  Matrix null_basis;
  /// Orthonormal basis of the orthogonal complement of the column space.
  Matrix left_null_basis;
  /// Orthonormal basis of the row space (cols x rank).
  Matrix corange_basis;
  /// Nonincreasing.
  Vector singular_values;
  /// The cut-off that was applied.
  double threshold = 0.0;
  /// True when some singular value lies within a factor 10 of the threshold.
  bool marginal = false;
};

RankDecomposition RankDecompose(const Matrix& M, RankTolerance tol = {});

/// Shorthand for RankDecompose(M, tol).rank.
int NumericalRank(const Matrix& M, RankTolerance tol = {});

/// Scaling and squaring with a diagonal Pade approximant of order 6.
Matrix Expm(const Matrix& M);

/// Van Loan quadrature: int_0^t exp(A^T s) M exp(A s) ds, from one
/// exponential of the block matrix [-A^T, M; 0, A] t.
Matrix QuadraticIntegral(const Matrix& A, const Matrix& M, double t);

/// Solves A^T Y + Y A + W = 0 through the n^2 x n^2 vectorized system.
/// Throws NumericalError("resonant Lyapunov ...") when A and -A^T share an
/// eigenvalue.
Matrix SolveLyapunov(const Matrix& A, const Matrix& W);

/// Newton iteration for the matrix sign function with determinant scaling.
Matrix MatrixSign(const Matrix& M);

struct SymmetricEigen {
  Vector values;   // ascending
  Matrix vectors;  // columns match values
};

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
SymmetricEigen SymEigen(const Matrix& M);

/// Ascending eigenvalues of a symmetric matrix.
Vector SymEigvals(const Matrix& M);

/// Euclidean projection of y onto {z : z^T P z <= rho} for SPD P.
Vector ProjectEllipsoid(const Vector& y, const Matrix& P, double rho);

// Small helpers used across modules.

/// Orthonormal basis of the column space of M (possibly zero columns).
Matrix Orth(const Matrix& M, RankTolerance tol = {});

/// Orthonormal basis of ker M.
Matrix NullSpace(const Matrix& M, RankTolerance tol = {});

/// 2-norm condition number; +inf for singular or empty-but-nonsquare input.
double ConditionNumber(const Matrix& M);

/// Checks that every entry is finite.
bool AllFinite(const Matrix& M);

/// (M + M^T) / 2, exactly symmetric.
Matrix Symmetrize(const Matrix& M);

/// Block-diagonal concatenation.
Matrix BlockDiag(const std::vector<Matrix>& blocks);

}  // namespace daempc
