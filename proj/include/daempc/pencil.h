#pragma once

// Structure of matrix pencils sE - A and of descriptor systems
// d/dt(Ex) = Ax + Bu: regularity, quasi-Kronecker blocks, index, impulse
// controllability.

#include <string>
#include <vector>

#include "daempc/numlin.h"

namespace daempc {

struct DaeSystem {
  Matrix E;  // l x n
  Matrix A;  // l x n
  Matrix B;  // l x m, m = 0 allowed

  Eigen::Index rows() const { return E.rows(); }
  Eigen::Index states() const { return E.cols(); }
  Eigen::Index inputs() const { return B.cols(); }

  /// Throws DimensionError when the shapes do not fit together.
  void Validate() const;
};

/// Mixed constraints [F G](x; u) <= 1 componentwise.
struct ConstraintSet {
  Matrix F;  // p x n
  Matrix G;  // p x m

  Eigen::Index count() const { return F.rows(); }
  void Validate(Eigen::Index n, Eigen::Index m) const;
};

/// Block-diagonal quasi-Kronecker form
///   left_transform * (sE - A) * right_transform
///     = diag(sE_U - A_U, sE_J - A_J, sE_N - A_N, sE_O - A_O),
/// with E_U, sE_U - A_U of full row rank for every s (underdetermined),
/// E_J invertible, A_N invertible with A_N^{-1} E_N nilpotent, and E_O,
/// sE_O - A_O of full column rank for every s (overdetermined).
struct KroneckerStructure {
  Eigen::Index l_U = 0, n_U = 0;
  Eigen::Index n_J = 0;
  Eigen::Index n_N = 0;
  Eigen::Index l_O = 0, n_O = 0;

  /// Column counts of the underdetermined Kronecker blocks (epsilon + 1),
  /// nonincreasing.
  std::vector<int> underdetermined_column_indices;
  /// Row counts of the overdetermined Kronecker blocks (eta + 1),
  /// nonincreasing.
  std::vector<int> overdetermined_row_indices;

  Matrix J;  // E_J^{-1} A_J
  Matrix N;  // A_N^{-1} E_N, nilpotent
  int nilpotency_index = 0;

  Matrix left_transform;   // l x l
  Matrix right_transform;  // n x n
  /// left_transform * E * right_transform and the same for A.
  Matrix E_form;
  Matrix A_form;
  /// 2-norm condition numbers of the two transforms.
  double left_condition = 1.0;
  double right_condition = 1.0;

  /// Set when a rank decision was within a factor 10 of the threshold.
  bool ill_posed = false;
  std::vector<std::string> warnings;

  bool IsRegularStructure() const {
    return n_U == 0 && l_U == 0 && n_O == 0 && l_O == 0;
  }
  bool SameBlockSizes(const KroneckerStructure& other) const;

  // Row/column offsets of the four diagonal blocks.
  Eigen::Index row_J() const { return l_U; }
  Eigen::Index row_N() const { return l_U + n_J; }
  Eigen::Index row_O() const { return l_U + n_J + n_N; }
  Eigen::Index col_J() const { return n_U; }
  Eigen::Index col_N() const { return n_U + n_J; }
  Eigen::Index col_O() const { return n_U + n_J + n_N; }
};

/// True iff l = n and det(lambda E - A) does not vanish identically, decided
/// by full-rank checks at lambda_k = k + 1/2, k = 0..n.
bool IsRegular(const Matrix& E, const Matrix& A);
bool IsRegular(const DaeSystem& sys);

KroneckerStructure ComputeKroneckerStructure(const Matrix& E, const Matrix& A,
                                             RankTolerance tol = {});

/// Nilpotency index of the nilpotent part; 0 when that part is empty.
int PencilIndex(const Matrix& E, const Matrix& A);

/// Smallest k with N^k = 0, to a tolerance relative to ||N||^k.
int NilpotencyIndex(const Matrix& N);

/// rank [E, A Z, B] = n with Z a kernel basis of E. Throws StructuralError
/// ("regularity required") for non-regular systems.
bool ImpulseControllable(const DaeSystem& sys);

/// True iff E x0 lies in the range of E [I_n, 0] X, where X is the lift from
/// reduced coordinates (z1; v) to (x; u).
bool IsWeaklyConsistent(const DaeSystem& sys, const Matrix& lift,
                        const Vector& x0);

/// Controllability indices of (A, B) (one per column of B, nonincreasing,
/// zeros for redundant columns).
std::vector<int> ControllabilityIndices(const Matrix& A, const Matrix& B,
                                        RankTolerance tol = {});

}  // namespace daempc
