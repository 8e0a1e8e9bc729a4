#pragma once

// Receding-horizon loop: at t = k delta the reduced state z1 (determined by
// E x) is measured, the OCP with terminal ingredients is solved on [0, T],
// the first delta time units are applied and the plant is propagated.

#include <string>
#include <vector>

#include "daempc/errors.h"
#include "daempc/ocp.h"
#include "daempc/pencil.h"
#include "daempc/regularize.h"
#include "daempc/riccati.h"
#include "daempc/terminal.h"

namespace daempc {

struct MpcConfig {
  double delta = 0.1;
  /// T = horizon_multiple * delta; at least 2 so that delta < T.
  int horizon_multiple = 3;
  /// Grid intervals per delta.
  int substeps = 10;
  int n_steps = 100;
  bool use_terminal = true;
  /// Stop early once V_f drops below this value.
  double vf_stop = 1e-12;
  long long seed = 0;
  double rho_cap = 1e6;
  OcpOptions ocp;

  double horizon() const { return delta * horizon_multiple; }
  void Validate() const;
};

/// Everything computed once before the loop starts.
struct MpcSetup {
  DaeSystem sys;
  ConstraintSet constraints;
  Matrix S;
  ReducedOde reduced;
  AssumptionReport assumptions;
  RiccatiSolution riccati;
  TerminalIngredients terminal;
  /// Horizon OCP, pre-stabilized with K_hat.
  DiscreteOcp docp;
  MpcConfig config;
  std::vector<std::string> warnings;
};

/// Regularize, solve the Riccati equation, build the terminal ingredients
/// and discretize. Errors carry a "[stage]" prefix and keep their type.
MpcSetup PrepareMpc(const DaeSystem& sys, const ConstraintSet& constraints,
                    const Matrix& S, const MpcConfig& config);

class FeasibilityLost : public NumericalError {
 public:
  FeasibilityLost(int step, Vector z1, const std::string& detail);
  int step() const { return step_; }
  const Vector& z1() const { return z1_; }

 private:
  int step_;
  Vector z1_;
};

struct MpcStepResult {
  OcpSolution prediction;
  /// Plant samples over [0, delta], n_hat x (substeps + 1).
  Matrix z_path;
  /// Applied w and v at the start of each substep, m_hat x substeps.
  Matrix w_applied, v_applied;
  /// Van Loan stage cost of each substep.
  std::vector<double> substep_costs;
  /// Largest gap between plant and predicted samples.
  double prediction_mismatch = 0.0;
};

/// One pass of the algorithm from z1_k. Throws FeasibilityLost when the OCP
/// is infeasible.
MpcStepResult MpcStep(const MpcSetup& setup, const Vector& z1_k, int step,
                      const Matrix& warm_w = Matrix());

struct ClosedLoopTrace {
  double delta = 0.0, h = 0.0;
  int substeps = 0;
  double rho = 0.0;
  Vector P_eigenvalues;

  // Per grid sample j = 0..J (J = steps * substeps).
  std::vector<double> times;
  Matrix x_path, u_path;    // n x (J+1), m x (J+1)
  Matrix z1_path, v_path;   // n_hat x (J+1), m_hat x (J+1)
  /// Cost of [t_j, t_{j+1}); zero for the last sample.
  std::vector<double> sample_stage_costs;
  std::vector<double> sample_vf;
  std::vector<int> sample_in_region;
  std::vector<OcpStatus> sample_status;
  /// Largest value of a constraint row at each sample.
  std::vector<double> sample_constraint;
  /// Largest constraint row value on a ten times finer grid.
  double dense_max_constraint = 0.0;

  // Per MPC step k = 0..K-1 (times k delta), endpoint arrays have K+1 entries.
  std::vector<double> step_times;
  std::vector<double> step_vf;
  std::vector<int> step_in_region;
  std::vector<double> stage_costs;
  std::vector<double> ocp_costs;
  std::vector<OcpStatus> ocp_statuses;
  std::vector<int> ocp_iterations;
  std::vector<double> prediction_mismatch;

  int steps() const { return static_cast<int>(stage_costs.size()); }
};

ClosedLoopTrace RunClosedLoop(const MpcSetup& setup, const Vector& z1_0);

/// Full pipeline from a state x0; z1(0) is read off E x0.
ClosedLoopTrace RunClosedLoop(const DaeSystem& sys,
                              const ConstraintSet& constraints,
                              const Matrix& S, const Vector& x0,
                              const MpcConfig& config);

struct DecreaseReport {
  /// V_f(k+1) - V_f(k) + stage_k for every step.
  std::vector<double> gaps;
  /// Checked on steps with both endpoints in X_f.
  int checked = 0;
  int first_violation = -1;
  bool holds = true;
};

DecreaseReport VerifyDecrease(const ClosedLoopTrace& trace,
                              double tol = 1e-7);

struct InvarianceReport {
  bool entered = false;
  int entry_sample = -1;
  double entry_time = 0.0;
  int first_exit_sample = -1;
  bool holds = true;
};

/// First strict interior sample (V_f < rho (1 - 1e-6)); membership with
/// slack 1e-8 is required afterwards.
InvarianceReport VerifyInvariance(const ClosedLoopTrace& trace);

struct ValueMonotonicityReport {
  /// J(k+1) - J(k) + stage_k.
  std::vector<double> gaps;
  double worst = 0.0;
  bool holds = true;
};

ValueMonotonicityReport VerifyValueMonotonicity(const ClosedLoopTrace& trace,
                                                double rel_tol = 1e-6);

}  // namespace daempc
