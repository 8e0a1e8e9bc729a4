#include "daempc/mpc.h"

#include <algorithm>
#include <cmath>
#include <utility>

#include <fmt/format.h>

namespace daempc {
namespace {

template <typename Fn>
auto Stage(const char* tag, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StructuralError& e) {
    throw StructuralError(fmt::format("[{}] {}", tag, e.what()));
  } catch (const DimensionError& e) {
    throw DimensionError(fmt::format("[{}] {}", tag, e.what()));
  } catch (const NumericalError& e) {
    throw NumericalError(fmt::format("[{}] {}", tag, e.what()));
  }
}

Matrix Augmented(const ReducedOde& red, const Matrix& K_p) {
  const Eigen::Index n = red.n_hat, m = red.m_hat;
  Matrix A = Matrix::Zero(n + m, n + m);
  A.topLeftCorner(n, n) = red.A_hat - red.B_hat * K_p;
  A.topRightCorner(n, m) = red.B_hat;
  return A;
}

double MaxRow(const Matrix& C, const Vector& zv) {
  return C.rows() > 0 ? (C * zv).maxCoeff() : -std::numeric_limits<double>::infinity();
}

}  // namespace

void MpcConfig::Validate() const {
  if (!(delta > 0.0)) throw DimensionError("mpc: delta must be positive");
  if (horizon_multiple < 2) {
    throw DimensionError("mpc: horizon_multiple must be at least 2 (delta < T)");
  }
  if (substeps < 1) throw DimensionError("mpc: substeps must be at least 1");
  if (n_steps < 0) throw DimensionError("mpc: steps must be nonnegative");
}

FeasibilityLost::FeasibilityLost(int step, Vector z1, const std::string& detail)
    : NumericalError(fmt::format("feasibility lost at k={} (z1 = [{}]): {}",
                                 step, fmt::join(z1.begin(), z1.end(), ", "),
                                 detail)),
      step_(step),
      z1_(std::move(z1)) {}

MpcSetup PrepareMpc(const DaeSystem& sys, const ConstraintSet& constraints,
                    const Matrix& S, const MpcConfig& config) {
  config.Validate();
  MpcSetup setup;
  setup.sys = sys;
  setup.constraints = constraints;
  setup.S = S;
  setup.config = config;
  setup.reduced = Stage("regularize", [&] {
    return BuildReducedOde(sys, constraints, S, config.seed);
  });
  for (const auto& w : setup.reduced.warnings) setup.warnings.push_back(w);
  setup.assumptions = CheckAssumptions(setup.reduced);
  if (!setup.assumptions.s_psd || !setup.assumptions.r_pd) {
    throw StructuralError(fmt::format(
        "[riccati] cost weight violates the standing assumptions: {}",
        fmt::join(setup.assumptions.details, "; ")));
  }
  if (!setup.assumptions.AllPass()) {
    setup.warnings.push_back(fmt::format(
        "standing assumptions: {}", fmt::join(setup.assumptions.details, "; ")));
  }
  setup.riccati = Stage("riccati", [&] { return SolveCare(setup.reduced); });
  if (!CertifyClosedLoop(setup.reduced, setup.riccati)) {
    throw NumericalError("[riccati] closed loop A - B K is not certified Hurwitz");
  }
  setup.terminal = Stage("terminal", [&] {
    return BuildTerminal(setup.reduced, setup.riccati, constraints,
                         TerminalOptions{config.rho_cap});
  });
  for (const auto& w : setup.terminal.warnings) setup.warnings.push_back(w);
  const int N = config.horizon_multiple * config.substeps;
  setup.docp = Stage("ocp", [&] {
    return Discretize(setup.reduced, config.horizon(), N, setup.riccati.K_gain);
  });
  AttachTerminal(setup.docp, setup.terminal);
  return setup;
}

MpcStepResult MpcStep(const MpcSetup& setup, const Vector& z1_k, int step,
                      const Matrix& warm_w) {
  const DiscreteOcp& d = setup.docp;
  OcpOptions opt = setup.config.ocp;
  if (warm_w.rows() == d.m && warm_w.cols() == d.N) opt.warm_w = warm_w;
  MpcStepResult r;
  r.prediction = SolveOcp(d, z1_k, setup.config.use_terminal, opt);
  if (r.prediction.status == OcpStatus::kInfeasible) {
    throw FeasibilityLost(step, z1_k, r.prediction.message);
  }
  const int M = setup.config.substeps;
  const Eigen::Index n = d.n, m = d.m;
  // Plant: exact propagation of the reduced ODE under the applied input.
  const Matrix F = Expm(Augmented(setup.reduced, d.K_p) * d.h);
  const Matrix Ad = F.topLeftCorner(n, n), Bd = F.topRightCorner(n, m);
  const Matrix W = d.StageWeight();
  r.z_path.resize(n, M + 1);
  r.w_applied = r.prediction.w_grid.leftCols(M);
  r.v_applied.resize(m, M);
  r.z_path.col(0) = z1_k;
  for (int j = 0; j < M; ++j) {
    const Vector z = r.z_path.col(j);
    const Vector w = r.w_applied.col(j);
    Vector zw(n + m);
    zw << z, w;
    r.substep_costs.push_back(zw.dot(W * zw));
    r.v_applied.col(j) = d.InputAt(z, w);
    r.z_path.col(j + 1) = Ad * z + Bd * w;
    r.prediction_mismatch =
        std::max(r.prediction_mismatch,
                 (r.z_path.col(j + 1) - r.prediction.z_grid.col(j + 1)).norm());
  }
  return r;
}

ClosedLoopTrace RunClosedLoop(const MpcSetup& setup, const Vector& z1_0) {
  const MpcConfig& cfg = setup.config;
  const ReducedOde& red = setup.reduced;
  const DiscreteOcp& d = setup.docp;
  const TerminalIngredients& ing = setup.terminal;
  if (z1_0.size() != red.n_hat) {
    throw DimensionError("RunClosedLoop: z1_0 has the wrong dimension");
  }
  const int M = cfg.substeps;
  ClosedLoopTrace tr;
  tr.delta = cfg.delta;
  tr.h = d.h;
  tr.substeps = M;
  tr.rho = ing.rho;
  tr.P_eigenvalues = red.n_hat > 0 ? SymEigvals(ing.P_hat) : Vector(0);

  std::vector<Vector> zs, vs;
  auto record_step_point = [&](const Vector& z) {
    const double vf = VfEval(ing, z);
    tr.step_times.push_back(tr.step_vf.size() * cfg.delta);
    tr.step_vf.push_back(vf);
    tr.step_in_region.push_back(InTerminalRegion(ing, z) ? 1 : 0);
  };

  // Dense monitor on a ten times finer grid inside each substep.
  const Matrix Aaug = Augmented(red, d.K_p);
  std::vector<Matrix> fine;
  for (int i = 1; i < 10; ++i) fine.push_back(Expm(Aaug * (d.h * i / 10.0)));
  auto monitor = [&](const Vector& z, const Vector& w) {
    Vector zw(d.n + d.m);
    zw << z, w;
    for (const Matrix& Fi : fine) {
      const Vector xi = Fi * zw;
      Vector zv(d.n + d.m);
      zv << xi.head(d.n), d.InputAt(xi.head(d.n), w);
      tr.dense_max_constraint =
          std::max(tr.dense_max_constraint, MaxRow(red.constraint_rows, zv));
    }
  };

  Vector z = z1_0;
  Matrix warm;
  record_step_point(z);
  for (int k = 0; k < cfg.n_steps; ++k) {
    if (tr.step_vf.back() < cfg.vf_stop) break;
    const MpcStepResult r = MpcStep(setup, z, k, warm);
    for (int j = 0; j < M; ++j) {
      zs.push_back(r.z_path.col(j));
      vs.push_back(r.v_applied.col(j));
      tr.sample_stage_costs.push_back(r.substep_costs[j]);
      tr.sample_status.push_back(r.prediction.status);
      monitor(r.z_path.col(j), r.w_applied.col(j));
    }
    double stage = 0.0;
    for (double c : r.substep_costs) stage += c;
    tr.stage_costs.push_back(stage);
    tr.ocp_costs.push_back(r.prediction.cost);
    tr.ocp_statuses.push_back(r.prediction.status);
    tr.ocp_iterations.push_back(r.prediction.iterations);
    tr.prediction_mismatch.push_back(r.prediction_mismatch);
    // Shift and extend with the LQR law, which is w = 0.
    warm = Matrix::Zero(d.m, d.N);
    warm.leftCols(d.N - M) = r.prediction.w_grid.rightCols(d.N - M);
    z = r.z_path.col(M);
    record_step_point(z);
  }
  // Input at the final sample: the next MPC move.
  OcpStatus last_status = OcpStatus::kOptimal;
  Vector v_last;
  try {
    const MpcStepResult r = MpcStep(setup, z, tr.steps(), warm);
    v_last = r.v_applied.col(0);
    last_status = r.prediction.status;
  } catch (const FeasibilityLost&) {
    v_last = -ing.K_gain * z;
    last_status = OcpStatus::kInfeasible;
  }
  zs.push_back(z);
  vs.push_back(v_last);
  tr.sample_stage_costs.push_back(0.0);
  tr.sample_status.push_back(last_status);

  const Eigen::Index J = static_cast<Eigen::Index>(zs.size());
  tr.z1_path.resize(red.n_hat, J);
  tr.v_path.resize(red.m_hat, J);
  for (Eigen::Index j = 0; j < J; ++j) {
    tr.z1_path.col(j) = zs[j];
    tr.v_path.col(j) = vs[j];
    tr.times.push_back(j * d.h);
    tr.sample_vf.push_back(VfEval(ing, zs[j]));
    tr.sample_in_region.push_back(InTerminalRegion(ing, zs[j]) ? 1 : 0);
    Vector zv(d.n + d.m);
    zv << zs[j], vs[j];
    tr.sample_constraint.push_back(MaxRow(red.constraint_rows, zv));
  }
  auto [x, u] = LiftTrajectory(red, tr.z1_path, tr.v_path);
  tr.x_path = std::move(x);
  tr.u_path = std::move(u);
  return tr;
}

ClosedLoopTrace RunClosedLoop(const DaeSystem& sys,
                              const ConstraintSet& constraints,
                              const Matrix& S, const Vector& x0,
                              const MpcConfig& config) {
  const MpcSetup setup = PrepareMpc(sys, constraints, S, config);
  return RunClosedLoop(setup, InitialReducedState(setup.reduced, x0));
}

DecreaseReport VerifyDecrease(const ClosedLoopTrace& trace, double tol) {
  DecreaseReport rep;
  for (int k = 0; k < trace.steps(); ++k) {
    const double gap =
        trace.step_vf[k + 1] - trace.step_vf[k] + trace.stage_costs[k];
    rep.gaps.push_back(gap);
    if (trace.step_in_region[k] && trace.step_in_region[k + 1]) {
      ++rep.checked;
      if (gap > tol * (1.0 + trace.step_vf[k]) && rep.holds) {
        rep.holds = false;
        rep.first_violation = k;
      }
    }
  }
  return rep;
}

InvarianceReport VerifyInvariance(const ClosedLoopTrace& trace) {
  InvarianceReport rep;
  const std::size_t J = trace.sample_vf.size();
  for (std::size_t j = 0; j < J; ++j) {
    if (!rep.entered) {
      if (trace.sample_vf[j] < trace.rho * (1.0 - 1e-6)) {
        rep.entered = true;
        rep.entry_sample = static_cast<int>(j);
        rep.entry_time = trace.times[j];
      }
      continue;
    }
    if (trace.sample_vf[j] > trace.rho * (1.0 + 1e-8)) {
      rep.holds = false;
      rep.first_exit_sample = static_cast<int>(j);
      break;
    }
  }
  return rep;
}

ValueMonotonicityReport VerifyValueMonotonicity(const ClosedLoopTrace& trace,
                                                double rel_tol) {
  ValueMonotonicityReport rep;
  for (int k = 0; k + 1 < trace.steps(); ++k) {
    const double gap =
        trace.ocp_costs[k + 1] - trace.ocp_costs[k] + trace.stage_costs[k];
    rep.gaps.push_back(gap);
    rep.worst = std::max(rep.worst, gap);
    if (gap > rel_tol * (1.0 + trace.ocp_costs[k])) rep.holds = false;
  }
  return rep;
}

}  // namespace daempc
