#pragma once

// Infinite-horizon LQ problem of the reduced ODE
//
//   min int (z; v)^T [Q H; H^T R] (z; v) dt,   dz/dt = A z + B v,
//
// its standing assumptions and the Riccati equation
//   A^T P + P A + Q - (P B + H) R^{-1} (P B + H)^T = 0.

#include <limits>
#include <string>
#include <vector>

#include "daempc/numlin.h"
#include "daempc/regularize.h"

namespace daempc {

struct LqData {
  Matrix A, B;     // n_hat x n_hat, n_hat x m_hat
  Matrix Q, H, R;  // cost blocks

  Eigen::Index states() const { return A.rows(); }
  Eigen::Index inputs() const { return B.cols(); }
  Matrix S() const;
};

LqData LqFromReduced(const ReducedOde& reduced);

struct AssumptionReport {
  bool s_psd = false;
  bool stabilizable = false;
  bool r_pd = false;
  bool observable = false;
  bool rank_match = false;

  double s_min_eigenvalue = 0.0;
  double r_min_eigenvalue = 0.0;
  int rank_S = 0;
  int rank_Q = 0;
  int rank_R = 0;
  int observability_rank = 0;
  std::vector<std::string> details;

  bool AllPass() const {
    return s_psd && stabilizable && r_pd && observable && rank_match;
  }
};

struct RiccatiSolution {
  Matrix P_hat;
  /// K = R^{-1}(B^T P + H^T); the optimal input is v = -K z.
  Matrix K_gain;
  double residual_norm = 0.0;
  double lambda_min = std::numeric_limits<double>::infinity();
  /// Residual after the sign-function step and after each refinement sweep.
  std::vector<double> residual_trace;
};

/// Frobenius norm of the Riccati residual at P.
double CareResidual(const LqData& lq, const Matrix& P);

AssumptionReport CheckAssumptions(const LqData& lq);
AssumptionReport CheckAssumptions(const ReducedOde& reduced);

/// Matrix-sign solution of the Hamiltonian stable subspace followed by two
/// Newton (Kleinman) sweeps. Throws NumericalError("CARE failure ...").
RiccatiSolution SolveCare(const LqData& lq);
RiccatiSolution SolveCare(const ReducedOde& reduced);

/// Newton sweeps starting from P0 (which must give a stabilizing gain).
Matrix RefineCare(const LqData& lq, const Matrix& P0, int sweeps);

/// The Lyapunov equation of A - B K with right-hand side I has a positive
/// definite solution.
bool CertifyClosedLoop(const LqData& lq, const RiccatiSolution& sol);
bool CertifyClosedLoop(const ReducedOde& reduced, const RiccatiSolution& sol);

}  // namespace daempc
