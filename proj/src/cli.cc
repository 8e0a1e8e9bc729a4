#include "daempc/cli.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "daempc/errors.h"
#include "daempc/mpc.h"
#include "daempc/system_file.h"

namespace daempc {
namespace {

using ojson = nlohmann::ordered_json;

ojson ToJson(const Matrix& M) {
  ojson rows = ojson::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    ojson row = ojson::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(row);
  }
  return rows;
}

ojson ToJson(const Vector& v) {
  ojson a = ojson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

std::string FormatValue(const ojson& v) {
  if (v.is_null()) return "none";
  if (v.is_boolean()) return v.get<bool>() ? "yes" : "no";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return fmt::format("{:.10g}", v.get<double>());
  if (v.is_string()) return v.get<std::string>();
  std::vector<std::string> parts;
  for (const auto& x : v) parts.push_back(FormatValue(x));
  return fmt::format("[{}]", fmt::join(parts, ", "));
}

// One "key: value" line per leaf; nested objects use dotted keys.
void PrintSummary(std::ostream& out, const ojson& rep, const std::string& prefix = "") {
  for (const auto& [key, v] : rep.items()) {
    const std::string name = prefix.empty() ? key : prefix + "." + key;
    if (v.is_object()) {
      PrintSummary(out, v, name);
    } else if (v.is_array() && !v.empty() && v.front().is_string()) {
      for (const auto& s : v) out << name << ": " << s.get<std::string>() << "\n";
    } else {
      out << name << ": " << FormatValue(v) << "\n";
    }
  }
}

void WriteReport(const std::string& path, const ojson& rep) {
  if (path.empty()) return;
  std::ofstream f(path);
  if (!f) throw FileError(fmt::format("{}: cannot write report", path));
  f << rep.dump(2) << "\n";
}

struct Options {
  std::string file;
  long long seed = 0;
  std::optional<double> horizon, delta;
  std::optional<int> steps;
  bool no_terminal = false;
  std::string out_csv, report;
};

MpcConfig ConfigFor(const SystemFile& f, const Options& opt) {
  MpcConfig cfg;
  const MpcBlock blk = f.mpc.value_or(MpcBlock{});
  cfg.delta = opt.delta.value_or(blk.delta);
  cfg.substeps = blk.substeps;
  cfg.n_steps = opt.steps.value_or(blk.steps);
  cfg.horizon_multiple = blk.horizon_multiple;
  if (opt.horizon) {
    const double ratio = *opt.horizon / cfg.delta;
    const long q = std::lround(ratio);
    if (std::abs(ratio - q) > 1e-9 * std::max(1.0, ratio)) {
      throw DimensionError(fmt::format(
          "--horizon {} is not a multiple of delta {}", *opt.horizon, cfg.delta));
    }
    cfg.horizon_multiple = static_cast<int>(q);
  }
  cfg.use_terminal = !opt.no_terminal;
  cfg.seed = opt.seed;
  cfg.Validate();
  return cfg;
}

ojson AssumptionJson(const AssumptionReport& a) {
  ojson j;
  j["pass"] = a.AllPass();
  j["s_psd"] = a.s_psd;
  j["r_pd"] = a.r_pd;
  j["stabilizable"] = a.stabilizable;
  j["observable"] = a.observable;
  j["rank_match"] = a.rank_match;
  j["rank_S"] = a.rank_S;
  j["rank_Q"] = a.rank_Q;
  j["rank_R"] = a.rank_R;
  j["observability_rank"] = a.observability_rank;
  j["s_min_eigenvalue"] = a.s_min_eigenvalue;
  j["r_min_eigenvalue"] = a.r_min_eigenvalue;
  return j;
}

ojson Header(const char* command, const SystemFile& f, const Options& opt) {
  ojson rep;
  rep["command"] = command;
  rep["file"] = opt.file;
  rep["name"] = f.name;
  rep["seed"] = opt.seed;
  return rep;
}

int CmdAnalyze(const Options& opt, std::ostream& out) {
  const SystemFile f = LoadSystemFile(opt.file);
  const DaeSystem& s = f.sys;
  ojson rep = Header("analyze", f, opt);
  rep["rows"] = s.rows();
  rep["states"] = s.states();
  rep["inputs"] = s.inputs();
  const bool regular = IsRegular(s);
  const KroneckerStructure ks = ComputeKroneckerStructure(s.E, s.A);
  rep["regular"] = regular;
  rep["index"] = regular ? ojson(ks.nilpotency_index) : ojson();
  rep["impulse_controllable"] = regular ? ojson(ImpulseControllable(s)) : ojson();
  ojson blocks;
  blocks["l_U"] = ks.l_U;
  blocks["n_U"] = ks.n_U;
  blocks["n_J"] = ks.n_J;
  blocks["n_N"] = ks.n_N;
  blocks["l_O"] = ks.l_O;
  blocks["n_O"] = ks.n_O;
  blocks["underdetermined_columns"] = ks.underdetermined_column_indices;
  blocks["overdetermined_rows"] = ks.overdetermined_row_indices;
  rep["blocks"] = blocks;

  const ReducedOde red = BuildReducedOde(s, f.constraints, f.S, opt.seed);
  const AssumptionReport a = CheckAssumptions(red);
  rep["route"] = RouteName(red.route);
  rep["n_hat"] = red.n_hat;
  rep["m_hat"] = red.m_hat;
  rep["assumptions"] = AssumptionJson(a);
  // Cost weight in reduced coordinates: the implemented congruence X^T S X
  // next to the similarity form X^+ S X with the canonical left inverse.
  rep["S_hat"] = ToJson(red.S_hat);
  rep["S_hat_left_inverse_form"] = ToJson(Matrix(red.X_left_inverse * f.S * red.X));
  std::string headline = regular ? fmt::format("regular, index {}", ks.nilpotency_index)
                                 : std::string("singular");
  headline += fmt::format(", route: {}, index-1 reduced dim n_hat={}, assumptions: {}",
                          RouteName(red.route), red.n_hat, a.AllPass() ? "pass" : "fail");
  rep["summary"] = headline;
  std::vector<std::string> warnings = f.warnings;
  for (const auto& w : ks.warnings) warnings.push_back(w);
  for (const auto& w : red.warnings) warnings.push_back(w);
  for (const auto& d : a.details) warnings.push_back(d);
  rep["warnings"] = warnings;
  PrintSummary(out, rep);
  WriteReport(opt.report, rep);
  return kExitOk;
}

int CmdRegularize(const Options& opt, std::ostream& out) {
  const SystemFile f = LoadSystemFile(opt.file);
  const ReducedOde red = BuildReducedOde(f.sys, f.constraints, f.S, opt.seed);
  ojson rep = Header("regularize", f, opt);
  rep["route"] = RouteName(red.route);
  rep["n_hat"] = red.n_hat;
  rep["m_hat"] = red.m_hat;
  if (red.feedback) {
    rep["feedback_K"] = ToJson(red.feedback->K);
    rep["feedback_seed_used"] = red.feedback->seed_used;
  }
  if (red.unimodular) rep["identity_residual"] = red.unimodular->identity_residual;
  rep["A_hat"] = ToJson(red.A_hat);
  rep["B_hat"] = ToJson(red.B_hat);
  rep["X"] = ToJson(red.X);
  rep["S_hat"] = ToJson(red.S_hat);
  rep["constraint_rows"] = ToJson(red.constraint_rows);
  std::vector<std::string> warnings = f.warnings;
  for (const auto& w : red.warnings) warnings.push_back(w);
  rep["warnings"] = warnings;
  PrintSummary(out, rep);
  WriteReport(opt.report, rep);
  return kExitOk;
}

int CmdOcp(const Options& opt, std::ostream& out, std::ostream& err) {
  const SystemFile f = LoadSystemFile(opt.file);
  const MpcConfig cfg = ConfigFor(f, opt);
  const MpcSetup setup = PrepareMpc(f.sys, f.constraints, f.S, cfg);
  const Vector z0 = InitialReducedState(setup.reduced, f.InitialState());
  const OcpSolution sol = SolveOcp(setup.docp, z0, cfg.use_terminal, cfg.ocp);

  ojson rep = Header("ocp", f, opt);
  rep["horizon"] = cfg.horizon();
  rep["intervals"] = setup.docp.N;
  rep["terminal"] = cfg.use_terminal;
  rep["status"] = StatusName(sol.status);
  rep["z1_0"] = ToJson(z0);
  if (sol.status == OcpStatus::kInfeasible) {
    rep["message"] = sol.message;
    PrintSummary(out, rep);
    WriteReport(opt.report, rep);
    err << "error: infeasible OCP: " << sol.message << "\n";
    return kExitRuntime;
  }
  rep["cost"] = sol.cost;
  rep["stage_cost"] = sol.stage_cost;
  rep["terminal_value"] = sol.terminal_value;
  rep["primal_residual"] = sol.primal_residual;
  rep["dual_residual"] = sol.dual_residual;
  rep["iterations"] = sol.iterations;
  rep["polished"] = sol.polished;
  const Matrix v0 = sol.v_grid.leftCols(std::min<Eigen::Index>(1, sol.v_grid.cols()));
  const auto lifted = LiftTrajectory(setup.reduced, sol.z_grid.leftCols(v0.cols()), v0);
  rep["first_v"] = ToJson(Vector(v0.col(0)));
  rep["first_u"] = ToJson(Vector(lifted.second.col(0)));
  const Vector zN = sol.z_grid.col(sol.z_grid.cols() - 1);
  rep["z1_end"] = ToJson(zN);
  rep["rho"] = setup.terminal.rho;
  rep["V_f_end"] = VfEval(setup.terminal, zN);
  rep["end_in_terminal_region"] = InTerminalRegion(setup.terminal, zN, 1e-6);
  std::vector<std::string> warnings = f.warnings;
  for (const auto& w : setup.warnings) warnings.push_back(w);
  rep["warnings"] = warnings;
  PrintSummary(out, rep);
  WriteReport(opt.report, rep);
  return sol.status == OcpStatus::kOptimal ? kExitOk : kExitRuntime;
}

void WriteCsv(const std::string& path, const ClosedLoopTrace& tr) {
  std::ofstream f(path);
  if (!f) throw FileError(fmt::format("{}: cannot write CSV", path));
  f << "t";
  for (Eigen::Index i = 0; i < tr.x_path.rows(); ++i) f << ",x_" << i + 1;
  for (Eigen::Index j = 0; j < tr.u_path.rows(); ++j) f << ",u_" << j + 1;
  f << ",stage_cost,V_f,in_terminal_region,ocp_status\n";
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    f << fmt::format("{:.15g}", tr.times[k]);
    for (Eigen::Index i = 0; i < tr.x_path.rows(); ++i) {
      f << fmt::format(",{:.15g}", tr.x_path(i, c));
    }
    for (Eigen::Index j = 0; j < tr.u_path.rows(); ++j) {
      f << fmt::format(",{:.15g}", tr.u_path(j, c));
    }
    f << fmt::format(",{:.15g},{:.15g},{},{}\n", tr.sample_stage_costs[k],
                     tr.sample_vf[k], tr.sample_in_region[k],
                     StatusName(tr.sample_status[k]));
  }
}

int CmdMpc(const Options& opt, std::ostream& out) {
  const SystemFile f = LoadSystemFile(opt.file);
  const MpcConfig cfg = ConfigFor(f, opt);
  const MpcSetup setup = PrepareMpc(f.sys, f.constraints, f.S, cfg);
  const Vector z0 = InitialReducedState(setup.reduced, f.InitialState());
  const ClosedLoopTrace tr = RunClosedLoop(setup, z0);

  ojson rep = Header("mpc", f, opt);
  rep["delta"] = cfg.delta;
  rep["horizon"] = cfg.horizon();
  rep["substeps"] = cfg.substeps;
  rep["terminal"] = cfg.use_terminal;
  rep["steps_run"] = tr.steps();
  rep["rho"] = tr.rho;
  rep["P_eigenvalues"] = ToJson(tr.P_eigenvalues);
  const InvarianceReport inv = VerifyInvariance(tr);
  rep["entry_time"] = inv.entered ? ojson(inv.entry_time) : ojson();
  rep["invariance_holds"] = inv.holds;
  const DecreaseReport dec = VerifyDecrease(tr);
  rep["decrease_checked"] = dec.checked;
  rep["decrease_holds"] = dec.holds;
  rep["value_monotone"] = VerifyValueMonotonicity(tr).holds;
  double max_c = -std::numeric_limits<double>::infinity();
  for (double c : tr.sample_constraint) max_c = std::max(max_c, c);
  rep["max_sample_constraint"] = std::isfinite(max_c) ? ojson(max_c) : ojson();
  rep["dense_max_constraint"] =
      tr.sample_constraint.empty() ? ojson() : ojson(tr.dense_max_constraint);
  double mismatch = 0.0, total = 0.0;
  for (double e : tr.prediction_mismatch) mismatch = std::max(mismatch, e);
  for (double c : tr.stage_costs) total += c;
  rep["max_prediction_mismatch"] = mismatch;
  rep["closed_loop_cost"] = total;
  rep["final_time"] = tr.times.empty() ? 0.0 : tr.times.back();
  rep["final_z1_norm"] =
      tr.z1_path.cols() > 0 ? tr.z1_path.col(tr.z1_path.cols() - 1).norm() : 0.0;
  if (!opt.out_csv.empty()) {
    WriteCsv(opt.out_csv, tr);
    rep["csv"] = opt.out_csv;
  }
  std::vector<std::string> warnings = f.warnings;
  for (const auto& w : setup.warnings) warnings.push_back(w);
  rep["warnings"] = warnings;
  PrintSummary(out, rep);
  WriteReport(opt.report, rep);
  return kExitOk;
}

}  // namespace

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Model predictive control for linear descriptor systems", "daempc"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("file", opt.file, "JSON problem file")->required();
    sub->add_option("--seed", opt.seed, "seed for randomized steps");
    sub->add_option("--report", opt.report, "write the summary as JSON");
  };
  auto add_horizon = [&](CLI::App* sub) {
    sub->add_option("--horizon", opt.horizon, "prediction horizon T");
    sub->add_option("--delta", opt.delta, "sampling time");
    sub->add_flag("--no-terminal", opt.no_terminal, "drop X_f and V_f");
  };
  CLI::App* analyze = app.add_subcommand("analyze", "pencil structure and assumptions");
  add_common(analyze);
  CLI::App* regularize = app.add_subcommand("regularize", "reduced ODE data");
  add_common(regularize);
  CLI::App* ocp = app.add_subcommand("ocp", "solve the horizon OCP once");
  add_common(ocp);
  add_horizon(ocp);
  CLI::App* mpc = app.add_subcommand("mpc", "closed-loop simulation");
  add_common(mpc);
  add_horizon(mpc);
  mpc->add_option("--steps", opt.steps, "number of MPC steps");
  mpc->add_option("--out", opt.out_csv, "CSV trace");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitRejected;
  }

  try {
    if (*analyze) return CmdAnalyze(opt, out);
    if (*regularize) return CmdRegularize(opt, out);
    if (*ocp) return CmdOcp(opt, out, err);
    return CmdMpc(opt, out);
  } catch (const FileError& e) {
    err << "error: " << e.what() << "\n";
    return kExitRejected;
  } catch (const StructuralError& e) {
    err << "error: " << e.what() << "\n";
    return kExitRejected;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitRejected;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace daempc
