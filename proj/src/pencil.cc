#include "daempc/pencil.h"

#include <algorithm>
#include <cmath>

#include "daempc/errors.h"

namespace daempc {

void DaeSystem::Validate() const {
  if (A.rows() != E.rows() || A.cols() != E.cols()) {
    throw DimensionError("E and A must have the same shape");
  }
  if (B.rows() != E.rows()) {
    throw DimensionError("B must have as many rows as E");
  }
}

void ConstraintSet::Validate(Eigen::Index n, Eigen::Index m) const {
  if (F.rows() != G.rows()) {
    throw DimensionError("F and G must have the same number of rows");
  }
  if (F.cols() != n || G.cols() != m) {
    throw DimensionError("F must be p x n and G must be p x m");
  }
}

bool KroneckerStructure::SameBlockSizes(const KroneckerStructure& o) const {
  return l_U == o.l_U && n_U == o.n_U && n_J == o.n_J && n_N == o.n_N &&
         l_O == o.l_O && n_O == o.n_O && nilpotency_index == o.nilpotency_index &&
         underdetermined_column_indices == o.underdetermined_column_indices &&
         overdetermined_row_indices == o.overdetermined_row_indices;
}

bool IsRegular(const Matrix& E, const Matrix& A) {
  if (E.rows() != A.rows() || E.cols() != A.cols()) {
    throw DimensionError("IsRegular: E and A must have the same shape");
  }
  if (E.rows() != E.cols()) return false;
  const Eigen::Index n = E.rows();
  if (n == 0) return true;
  for (Eigen::Index k = 0; k <= n; ++k) {
    const double lambda = static_cast<double>(k) + 0.5;
    if (NumericalRank(lambda * E - A) == n) return true;
  }
  return false;
}

bool IsRegular(const DaeSystem& sys) { return IsRegular(sys.E, sys.A); }

int NilpotencyIndex(const Matrix& N) {
  const Eigen::Index n = N.rows();
  if (n == 0) return 0;
  const double base = std::max(1.0, N.norm());
  Matrix P = N;
  double scale = base;
  for (Eigen::Index k = 1; k <= n; ++k) {
    if (P.norm() <= 1e-9 * scale) return static_cast<int>(k);
    P = P * N;
    scale *= base;
  }
  return static_cast<int>(n);
}

int PencilIndex(const Matrix& E, const Matrix& A) {
  return ComputeKroneckerStructure(E, A).nilpotency_index;
}

bool ImpulseControllable(const DaeSystem& sys) {
  sys.Validate();
  if (!IsRegular(sys)) {
    throw StructuralError(
        "impulse controllability: regularity required (use the unimodular "
        "regularization route for non-regular systems)");
  }
  const Eigen::Index n = sys.states();
  const Matrix Z = NullSpace(sys.E);
  Matrix M(sys.rows(), n + Z.cols() + sys.inputs());
  M << sys.E, sys.A * Z, sys.B;
  return NumericalRank(M) == n;
}

bool IsWeaklyConsistent(const DaeSystem& sys, const Matrix& lift,
                        const Vector& x0) {
  const Eigen::Index n = sys.states();
  if (x0.size() != n || lift.rows() != n + sys.inputs()) {
    throw DimensionError("IsWeaklyConsistent: dimension mismatch");
  }
  const Vector ex = sys.E * x0;
  const double ref = sys.E.norm() * x0.norm();
  if (ex.norm() <= 1e-14 * std::max(ref, 1e-300) || ex.norm() == 0.0) {
    return true;
  }
  const Matrix M = sys.E * lift.topRows(n);
  const Matrix Q = Orth(M, {1e-10, sys.E.norm() * lift.norm()});
  const Vector res = ex - Q * (Q.transpose() * ex);
  return res.norm() <= 1e-9 * std::max(ref, ex.norm());
}

std::vector<int> ControllabilityIndices(const Matrix& A, const Matrix& B,
                                        RankTolerance tol) {
  const Eigen::Index n = A.rows();
  const Eigen::Index k = B.cols();
  std::vector<int> out(k, 0);
  if (n == 0 || k == 0) return out;
  // Orthonormal Krylov staircase; d[j] = number of indices > j.
  std::vector<int> d;
  const double a_norm = std::max(A.norm(), 1e-300);
  Matrix Q = Orth(B, tol);
  int prev = 0;
  int cur = static_cast<int>(Q.cols());
  while (cur > prev) {
    d.push_back(cur - prev);
    if (cur == n) break;
    Matrix stacked(n, 2 * Q.cols());
    stacked << Q, A * Q / a_norm;
    Q = Orth(stacked, {tol.rtol, 1.0});
    prev = cur;
    cur = static_cast<int>(Q.cols());
  }
  for (Eigen::Index i = 0; i < k; ++i) {
    int count = 0;
    for (int dj : d) {
      if (dj > i) ++count;
    }
    out[i] = count;
  }
  return out;
}

}  // namespace daempc
