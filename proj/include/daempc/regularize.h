#pragma once

// Regularization of a descriptor system to an equivalent ODE optimal control
// problem:
//
//   (x; u) = X (z1; v),   dz1/dt = A_hat z1 + B_hat v,
//   (x; u)^T S (x; u) = (z1; v)^T (X^T S X) (z1; v).
//
// Two routes lead to a regular index-1 system [E_r, A_r, B_r] in
// coordinates (x; u) = T_hat (y; w): a state feedback u = K x + v for
// regular impulse controllable systems, and a unimodular left factor built
// from the quasi-Kronecker form of the extended pencil s[E, 0] - [A, B]
// otherwise. An SVD of E_r then separates differential and algebraic
// variables.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "daempc/numlin.h"
#include "daempc/pencil.h"

namespace daempc {

struct FeedbackRegularization {
  Matrix K;  // m x n, u = K x + v
  DaeSystem regularized;  // [E, A + B K, B]
  /// Seed of the accepted random draw; -1 when K = 0 was accepted.
  long long seed_used = -1;
};

struct UnimodularRegularization {
  /// (x; u) = T_hat (y; w), y in R^r, w in R^{m'}.
  Matrix T_hat;
  /// U(s) = s U1 + U0, unimodular, with
  ///   [sE - A, -B] T_hat = U(s) [0; sE_r - A_r, -B_r].
  Matrix U0, U1;
  Matrix E_r, A_r, B_r;
  Eigen::Index r = 0;
  /// Largest coefficient mismatch in the factorization identity, relative
  /// to the scale of the factors.
  double identity_residual = 0.0;
  KroneckerStructure structure;
  std::vector<std::string> warnings;
};

struct Index1Form {
  Matrix S_r, T_r;  // S_r E T_r = diag(I_{n_hat}, 0)
  Matrix A11, A12, A21, A22;
  Matrix B1, B2;
  Eigen::Index n_hat = 0;
  double a22_condition = 1.0;
};

enum class RegularizationRoute { kFeedback, kUnimodular };

const char* RouteName(RegularizationRoute route);

struct ReducedOde {
  Eigen::Index n = 0, m = 0;          // original state and input sizes
  Eigen::Index n_hat = 0, m_hat = 0;  // reduced state and input sizes
  RegularizationRoute route = RegularizationRoute::kFeedback;

  Matrix A_hat, B_hat;
  /// (x; u) = X (z1; v); (n + m) x (n_hat + m_hat).
  Matrix X;
  /// (x; u) = T_hat_total (z1; z2; v).
  Matrix T_hat_total;
  /// Canonical left inverse [I,0,0; 0,0,I] T_hat_total^{-1} of X.
  Matrix X_left_inverse;
  /// S_hat = X^T S X and its blocks.
  Matrix S_hat, Q_hat, H_hat, R_hat;
  /// z1(0) = init_selector (x0; 0); depends on x0 only through E x0.
  Matrix init_selector;
  /// [F G] X, one row per constraint.
  Matrix constraint_rows;

  /// Regularized index-1 system and its splitting.
  DaeSystem regularized;
  Index1Form index1;
  std::optional<FeedbackRegularization> feedback;
  std::optional<UnimodularRegularization> unimodular;
  std::vector<std::string> warnings;
};

/// Seeded random completion K = M Z^T with Z a kernel basis of E; K = 0 is
/// tried first. Throws StructuralError when the preconditions fail or ten
/// draws are rejected.
FeedbackRegularization FeedbackRegularize(const DaeSystem& sys, long long seed);

UnimodularRegularization UnimodularRegularize(const DaeSystem& sys);

/// det(s U1 + U0) is a nonzero constant, checked at l + 1 points s = k + 1/2.
bool VerifyUnimodular(const Matrix& U0, const Matrix& U1);

/// Requires a regular pencil of index at most one.
Index1Form Index1ToOde(const DaeSystem& sys);

/// Full pipeline: route selection, regularization, index-1 reduction, cost
/// and constraint transformation. S is (n+m) x (n+m) symmetric.
ReducedOde BuildReducedOde(const DaeSystem& sys, const ConstraintSet& cons,
                           const Matrix& S, long long seed = 0);

/// Pointwise (x; u) = X (z1; v). Columns are time samples.
std::pair<Matrix, Matrix> LiftTrajectory(const ReducedOde& reduced,
                                         const Matrix& z1_path,
                                         const Matrix& v_path);

/// Reduced initial value for a measured x0.
Vector InitialReducedState(const ReducedOde& reduced, const Vector& x0);

bool IsWeaklyConsistent(const DaeSystem& sys, const ReducedOde& reduced,
                        const Vector& x0);

/// Minimum-norm x0 with E x0 = Ex0, for problems posed through a measured
/// value of E x(0). Throws DimensionError when Ex0 is not in range(E).
Vector StateFromMeasurement(const DaeSystem& sys, const Vector& Ex0);

}  // namespace daempc
