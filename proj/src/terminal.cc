#include "daempc/terminal.h"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "daempc/errors.h"

namespace daempc {

TerminalIngredients BuildTerminal(const ReducedOde& reduced,
                                  const RiccatiSolution& sol,
                                  const ConstraintSet& constraints,
                                  const TerminalOptions& options) {
  const Eigen::Index n_hat = reduced.n_hat, m_hat = reduced.m_hat;
  if (sol.P_hat.rows() != n_hat || sol.K_gain.rows() != m_hat ||
      sol.K_gain.cols() != n_hat) {
    throw DimensionError("BuildTerminal: Riccati solution does not match");
  }
  constraints.Validate(reduced.n, reduced.m);
  TerminalIngredients ing;
  ing.P_hat = sol.P_hat;
  ing.K_gain = sol.K_gain;
  Matrix stack(n_hat + m_hat, n_hat);
  stack.topRows(n_hat).setIdentity();
  stack.bottomRows(m_hat) = -sol.K_gain;
  ing.L = reduced.X * stack;
  ing.W_state = ing.L.topRows(reduced.n);
  Matrix FG(constraints.count(), reduced.n + reduced.m);
  FG << constraints.F, constraints.G;
  ing.constraint_rows = FG * ing.L;

  for (Eigen::Index i = 0; i < ing.constraint_rows.rows(); ++i) {
    ing.max_row_norm =
        std::max(ing.max_row_norm, ing.constraint_rows.row(i).norm());
  }
  const double lambda_min =
      n_hat > 0 ? SymEigvals(sol.P_hat)(0)
                : std::numeric_limits<double>::infinity();
  const double scale = std::max(1.0, FG.size() > 0 ? FG.norm() : 0.0) *
                       std::max(1.0, ing.L.size() > 0 ? ing.L.norm() : 0.0);
  if (ing.max_row_norm <= 1e-14 * scale || n_hat == 0) {
    ing.rho = options.rho_cap;
    ing.capped = true;
    if (constraints.count() > 0 && n_hat > 0) {
      ing.warnings.push_back(fmt::format(
          "no constraint row depends on the reduced state; rho capped at {}",
          options.rho_cap));
    }
  } else {
    ing.rho = lambda_min / (ing.max_row_norm * ing.max_row_norm);
  }
  return ing;
}

double VfEval(const TerminalIngredients& ing, const Vector& z1) {
  if (z1.size() != ing.P_hat.rows()) {
    throw DimensionError(fmt::format("VfEval: expected {} entries, got {}",
                                     ing.P_hat.rows(), z1.size()));
  }
  if (z1.size() == 0) return 0.0;
  return z1.dot(ing.P_hat * z1);
}

bool InTerminalRegion(const TerminalIngredients& ing, const Vector& z1,
                      double slack) {
  return VfEval(ing, z1) <= ing.rho * (1.0 + slack);
}

Vector BoundaryPoint(const TerminalIngredients& ing, const Vector& u) {
  const double v = VfEval(ing, u);
  if (!(v > 0.0)) throw DimensionError("BoundaryPoint: zero direction");
  return u * std::sqrt(ing.rho / v);
}

TerminalCertificate CertifyTerminal(const ReducedOde& reduced,
                                    const TerminalIngredients& ing,
                                    int samples, std::uint64_t seed,
                                    double h, int steps,
                                    const std::vector<double>& deltas) {
  TerminalCertificate cert;
  cert.samples = samples;
  const Eigen::Index n = reduced.n_hat, m = reduced.m_hat;
  if (n == 0) {
    cert.invariant = cert.decrease = true;
    return cert;
  }
  const Matrix Acl = reduced.A_hat - reduced.B_hat * ing.K_gain;
  const Matrix step = Expm(Acl * h);
  // Stage cost of the closed loop: (z; -K z)^T S_hat (z; -K z).
  Matrix stack(n + m, n);
  stack.topRows(n).setIdentity();
  stack.bottomRows(m) = -ing.K_gain;
  const Matrix M = Symmetrize(stack.transpose() * reduced.S_hat * stack);
  std::vector<Matrix> flows, costs;
  for (double d : deltas) {
    flows.push_back(Expm(Acl * d));
    costs.push_back(QuadraticIntegral(Acl, M, d));
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const double vf_tol = 1e-9 * std::max(1.0, ing.rho);
  for (int s = 0; s < samples; ++s) {
    Vector u(n);
    for (Eigen::Index i = 0; i < n; ++i) u(i) = normal(rng);
    if (u.norm() == 0.0) u(0) = 1.0;
    const Vector z0 = BoundaryPoint(ing, u);
    Vector z = z0;
    double vf = VfEval(ing, z);
    for (int k = 0; k <= steps; ++k) {
      if (ing.constraint_rows.rows() > 0) {
        cert.max_constraint = std::max(
            cert.max_constraint, (ing.constraint_rows * z).maxCoeff());
      }
      if (k == steps) break;
      z = step * z;
      const double next = VfEval(ing, z);
      cert.max_vf_increase = std::max(cert.max_vf_increase, next - vf);
      vf = next;
    }
    const double v0 = VfEval(ing, z0);
    for (std::size_t j = 0; j < deltas.size(); ++j) {
      const double gap =
          VfEval(ing, flows[j] * z0) + z0.dot(costs[j] * z0) - v0;
      cert.max_decrease_gap = std::max(cert.max_decrease_gap, gap);
    }
  }
  cert.invariant = cert.max_vf_increase <= vf_tol &&
                   cert.max_constraint <= 1.0 + 1e-8;
  cert.decrease = cert.max_decrease_gap <= 1e-7;
  return cert;
}

}  // namespace daempc
