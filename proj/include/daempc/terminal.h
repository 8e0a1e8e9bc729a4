#pragma once

// Terminal ingredients of the stabilizing MPC scheme:
//
//   X_f = { L z : z^T P z <= rho },   V_f(z) = z^T P z,
//   L = X [I; -K],   rho = lambda_min(P) / (max_i |row_i([F G] L)|_2)^2.
//
// Inside X_f the LQR law v = -K z keeps every constraint row below one.

#include <cstdint>
#include <string>
#include <vector>

#include "daempc/numlin.h"
#include "daempc/regularize.h"
#include "daempc/riccati.h"

namespace daempc {

struct TerminalOptions {
  /// Radius used when no constraint row depends on z.
  double rho_cap = 1e6;
};

struct TerminalIngredients {
  double rho = 0.0;
  Matrix P_hat;
  Matrix K_gain;
  /// (x; u) = L z for z in X_f; (n + m) x n_hat.
  Matrix L;
  /// [I_n, 0] L.
  Matrix W_state;
  /// [F G] L, p x n_hat.
  Matrix constraint_rows;
  /// Largest Euclidean row norm of constraint_rows.
  double max_row_norm = 0.0;
  bool capped = false;
  std::vector<std::string> warnings;
};

TerminalIngredients BuildTerminal(const ReducedOde& reduced,
                                  const RiccatiSolution& sol,
                                  const ConstraintSet& constraints,
                                  const TerminalOptions& options = {});

/// z^T P z. Throws DimensionError on a size mismatch.
double VfEval(const TerminalIngredients& ing, const Vector& z1);

/// z^T P z <= rho (1 + slack).
bool InTerminalRegion(const TerminalIngredients& ing, const Vector& z1,
                      double slack = 1e-9);

/// A point with z^T P z = rho in the direction of u (u != 0).
Vector BoundaryPoint(const TerminalIngredients& ing, const Vector& u);

struct TerminalCertificate {
  int samples = 0;
  /// Largest per-step increase of V_f along the LQR flow.
  double max_vf_increase = 0.0;
  /// Largest constraint row value along the LQR flow.
  double max_constraint = 0.0;
  /// Largest V_f(z(delta)) + stage cost - V_f(z(0)) over samples and deltas.
  double max_decrease_gap = 0.0;
  bool invariant = false;
  bool decrease = false;
  bool Passed() const { return invariant && decrease; }
};

/// Samples boundary points of X_f, follows dz/dt = (A - B K) z exactly on a
/// grid of `steps` intervals of length `h`, and checks that V_f does not
/// increase (1e-9 per step), that the constraint rows stay below 1 + 1e-8,
/// and that V_f(z(d)) + int_0^d stage cost <= V_f(z(0)) + 1e-7 for each d in
/// `deltas`, with the stage cost integrated by Van Loan quadrature.
TerminalCertificate CertifyTerminal(const ReducedOde& reduced,
                                    const TerminalIngredients& ing,
                                    int samples, std::uint64_t seed,
                                    double h = 0.05, int steps = 100,
                                    const std::vector<double>& deltas = {
                                        0.05, 0.1, 0.5});

}  // namespace daempc
