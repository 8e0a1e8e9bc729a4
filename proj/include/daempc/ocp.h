#pragma once

// Finite-horizon constrained OCP over the reduced ODE
//
//   min  int_0^T (z; v)^T S_hat (z; v) dt + z(T)^T P z(T)
//   s.t. dz/dt = A_hat z + B_hat v,   C (z; v) <= 1 at grid points,
//        z(T)^T P z(T) <= rho.
//
// The input is parameterized on each grid interval as v = -K_p z + w with w
// piecewise constant. K_p = 0 gives plain zero-order hold; K_p = K_hat makes
// the terminal LQR law the point w = 0. Dynamics and cost are discretized
// exactly with augmented exponentials and the QP in the stacked w is solved
// by an ADMM operator-splitting scheme.

#include <optional>
#include <string>
#include <vector>

#include "daempc/numlin.h"
#include "daempc/regularize.h"
#include "daempc/riccati.h"
#include "daempc/terminal.h"

namespace daempc {

struct DiscreteOcp {
  int N = 0;
  double h = 0.0;
  Eigen::Index n = 0, m = 0;  // reduced state and input sizes
  /// Pre-stabilizing gain; m x n.
  Matrix K_p;
  /// z_{k+1} = Ad z_k + Bd w_k.
  Matrix Ad, Bd;
  /// Per-interval cost (z_k; w_k)^T [Qd Hd; Hd^T Rd] (z_k; w_k).
  Matrix Qd, Hd, Rd;
  /// Constraint rows in (z; w) coordinates, C_z z + C_w w <= 1.
  Matrix C_z, C_w;

  bool has_terminal = false;
  Matrix P_term;
  double rho = 0.0;
  Matrix K_term;

  Matrix StageWeight() const;
  /// Input v at the start of an interval.
  Vector InputAt(const Vector& z, const Vector& w) const;
};

/// T > 0, N >= 1. An empty K_p means zero.
DiscreteOcp Discretize(const ReducedOde& reduced, double T, int N,
                       const Matrix& K_p = Matrix());

/// Adds the terminal cost, the ellipsoid and the final-interval LQR equality.
void AttachTerminal(DiscreteOcp& docp, const TerminalIngredients& ing);

enum class OcpStatus { kOptimal, kMaxIter, kInfeasible };

const char* StatusName(OcpStatus status);

struct OcpOptions {
  int max_iter = 20000;
  double eps = 1e-8;
  double rho_admm = 1.0;
  double sigma = 1e-6;
  double alpha = 1.6;
  int adapt_every = 50;
  bool polish = true;
  /// Previous w_grid (m x N) used as the starting point.
  std::optional<Matrix> warm_w;
};

struct OcpSolution {
  OcpStatus status = OcpStatus::kOptimal;
  /// Decision variable w, m x N.
  Matrix w_grid;
  /// Input at the start of each interval, m x N.
  Matrix v_grid;
  /// n x (N + 1).
  Matrix z_grid;
  /// Stage costs plus the terminal cost when present.
  double cost = 0.0;
  double stage_cost = 0.0;
  double terminal_value = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  int iterations = 0;
  bool polished = false;
  std::string message;
};

OcpSolution SolveOcp(const DiscreteOcp& docp, const Vector& z1_0,
                     bool use_terminal, const OcpOptions& options = {});

/// Constraint-free problem by backward dynamic programming; the terminal
/// cost is included when use_terminal and the OCP carries one.
OcpSolution SolveUnconstrained(const DiscreteOcp& docp, const Vector& z1_0,
                               bool use_terminal);

/// Rolls the dynamics forward and evaluates the cost of a given w path.
OcpSolution EvaluatePath(const DiscreteOcp& docp, const Vector& z1_0,
                         const Matrix& w_grid, bool use_terminal);

/// z^T P z.
double InfiniteHorizonValue(const RiccatiSolution& sol, const Vector& z1_0);

/// |V(z0) - (J_T + V(z(T)))| along the unconstrained optimum over an N-step
/// zero-order-hold grid.
double BellmanResidual(const ReducedOde& reduced, const RiccatiSolution& sol,
                       const Vector& z1_0, double T, int N = 200);

}  // namespace daempc
