#include "daempc/ocp.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "daempc/errors.h"

namespace daempc {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double InfNorm(const Vector& v) {
  return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>();
}

// Condensed form z = phi + Gamma w of the stacked states z_0..z_N.
struct Condensed {
  Matrix Gamma;  // (N+1) n x N m
  Vector phi;    // (N+1) n
};

Condensed Condense(const DiscreteOcp& d, const Vector& z0) {
  const Eigen::Index n = d.n, m = d.m;
  const int N = d.N;
  Condensed c;
  c.Gamma = Matrix::Zero((N + 1) * n, N * m);
  c.phi = Vector::Zero((N + 1) * n);
  c.phi.head(n) = z0;
  for (int k = 0; k < N; ++k) {
    c.phi.segment((k + 1) * n, n) = d.Ad * c.phi.segment(k * n, n);
    c.Gamma.middleRows((k + 1) * n, n) = d.Ad * c.Gamma.middleRows(k * n, n);
    c.Gamma.block((k + 1) * n, k * m, n, m) += d.Bd;
  }
  return c;
}

// Everything the splitting iteration needs, in the stacked w.
struct Qp {
  Matrix P;  // Hessian of 1/2 w^T P w + q^T w + c
  Vector q;
  double c = 0.0;
  Matrix A_in;  // A_in w <= u_in
  Vector u_in;
  Matrix A_eq;  // A_eq w = b_eq
  Vector b_eq;
  bool ellipsoid = false;
  Matrix A_ell;  // s = A_ell w, (s + ell_shift)^T P_ell (s + ell_shift) <= rho
  Vector ell_shift;
  Matrix P_ell;
  double rho = 0.0;
  bool trivially_infeasible = false;
  double worst_constant_row = 0.0;
};

Qp BuildQp(const DiscreteOcp& d, const Vector& z0, bool use_terminal) {
  const Eigen::Index n = d.n, m = d.m;
  const int N = d.N;
  const Eigen::Index nw = N * m;
  const Condensed cd = Condense(d, z0);
  auto G = [&](int k) { return cd.Gamma.middleRows(k * n, n); };
  auto phi = [&](int k) { return cd.phi.segment(k * n, n); };

  Qp qp;
  qp.P = Matrix::Zero(nw, nw);
  qp.q = Vector::Zero(nw);
  for (int k = 0; k < N; ++k) {
    const Matrix Gk = G(k);
    const Matrix QG = d.Qd * Gk;
    qp.P += Gk.transpose() * QG;
    const Matrix HtG = d.Hd.transpose() * Gk;  // m x nw
    qp.P.middleRows(k * m, m) += HtG;
    qp.P.middleCols(k * m, m) += HtG.transpose();
    qp.P.block(k * m, k * m, m, m) += d.Rd;
    qp.q += Gk.transpose() * (d.Qd * phi(k));
    qp.q.segment(k * m, m) += d.Hd.transpose() * phi(k);
    qp.c += phi(k).dot(d.Qd * phi(k));
  }
  const bool terminal = use_terminal && d.has_terminal && n > 0;
  if (terminal) {
    const Matrix GN = G(N);
    qp.P += GN.transpose() * d.P_term * GN;
    qp.q += GN.transpose() * (d.P_term * phi(N));
    qp.c += phi(N).dot(d.P_term * phi(N));
  }
  qp.P = Symmetrize(2.0 * qp.P);
  qp.q *= 2.0;

  // Grid samples t_0..t_{N-1} and the left limit at t_N.
  const Eigen::Index p = d.C_z.rows();
  std::vector<Vector> rows;
  std::vector<double> bounds;
  for (int k = 0; k <= N; ++k) {
    const int j = std::min(k, N - 1);
    for (Eigen::Index i = 0; i < p; ++i) {
      Vector a = G(k).transpose() * d.C_z.row(i).transpose();
      a.segment(j * m, m) += d.C_w.row(i).transpose();
      const double constant = d.C_z.row(i).dot(phi(k));
      const double bound = 1.0 - constant;
      if (InfNorm(a) <= 1e-14 * (1.0 + d.C_z.row(i).norm() + d.C_w.row(i).norm())) {
        qp.worst_constant_row = std::max(qp.worst_constant_row, constant);
        if (constant > 1.0 + 1e-9) qp.trivially_infeasible = true;
        continue;
      }
      rows.push_back(a);
      bounds.push_back(bound);
    }
  }
  qp.A_in.resize(static_cast<Eigen::Index>(rows.size()), nw);
  qp.u_in.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    qp.A_in.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    qp.u_in(static_cast<Eigen::Index>(i)) = bounds[i];
  }

  if (terminal) {
    // w_{N-1} + (K_term - K_p) z_{N-1} = 0, i.e. v = -K_term z at t_{N-1}.
    const Matrix D = d.K_term - d.K_p;
    qp.A_eq = D * G(N - 1);
    qp.A_eq.middleCols((N - 1) * m, m) += Matrix::Identity(m, m);
    qp.b_eq = -D * phi(N - 1);
    qp.ellipsoid = true;
    qp.A_ell = G(N);
    qp.ell_shift = phi(N);
    qp.P_ell = d.P_term;
    qp.rho = d.rho;
  } else {
    qp.A_eq.resize(0, nw);
    qp.b_eq.resize(0);
  }
  return qp;
}

// Support function of the constraint set at dy, for the infeasibility
// certificate.
double Support(const Qp& qp, const Vector& dy, double tiny) {
  const Eigen::Index r = qp.A_in.rows(), e = qp.A_eq.rows();
  double s = 0.0;
  for (Eigen::Index i = 0; i < r; ++i) {
    if (dy(i) < -tiny) return kInf;
    s += qp.u_in(i) * std::max(dy(i), 0.0);
  }
  for (Eigen::Index i = 0; i < e; ++i) s += qp.b_eq(i) * dy(r + i);
  if (qp.ellipsoid) {
    const Vector de = dy.tail(qp.A_ell.rows());
    s += -qp.ell_shift.dot(de) +
         std::sqrt(std::max(0.0, qp.rho * de.dot(qp.P_ell.ldlt().solve(de))));
  }
  return s;
}

struct AdmmResult {
  Vector x;
  OcpStatus status = OcpStatus::kMaxIter;
  double primal = 0.0;
  double dual = 0.0;
  int iterations = 0;
  Vector y;
  Vector z;
};

AdmmResult RunAdmm(const Qp& qp, const OcpOptions& opt, const Vector& x0) {
  const Eigen::Index nw = qp.P.rows();
  const Eigen::Index r = qp.A_in.rows(), e = qp.A_eq.rows();
  const Eigen::Index ne = qp.ellipsoid ? qp.A_ell.rows() : 0;
  const Eigen::Index rows = r + e + ne;
  Matrix A(rows, nw);
  A.topRows(r) = qp.A_in;
  A.middleRows(r, e) = qp.A_eq;
  if (ne > 0) A.bottomRows(ne) = qp.A_ell;

  auto project = [&](const Vector& v) {
    Vector out = v;
    for (Eigen::Index i = 0; i < r; ++i) out(i) = std::min(v(i), qp.u_in(i));
    out.segment(r, e) = qp.b_eq;
    if (ne > 0) {
      out.tail(ne) = ProjectEllipsoid(v.tail(ne) + qp.ell_shift, qp.P_ell,
                                      qp.rho) -
                     qp.ell_shift;
    }
    return out;
  };

  double rho = opt.rho_admm;
  auto rho_vector = [&](double base) {
    Vector rv = Vector::Constant(rows, base);
    rv.segment(r, e).setConstant(1e3 * base);
    return rv;
  };
  Vector rv = rho_vector(rho);
  auto factor = [&](const Vector& weights) {
    Matrix K = qp.P + opt.sigma * Matrix::Identity(nw, nw) +
               A.transpose() * weights.asDiagonal() * A;
    return Eigen::LLT<Matrix>(Symmetrize(K));
  };
  Eigen::LLT<Matrix> llt = factor(rv);

  AdmmResult res;
  Vector x = x0;
  Vector z = project(A * x);
  Vector y = Vector::Zero(rows);
  Vector dy = Vector::Zero(rows);
  const double q_norm = InfNorm(qp.q);
  for (int it = 1; it <= opt.max_iter; ++it) {
    const Vector rhs = opt.sigma * x - qp.q + A.transpose() * (rv.cwiseProduct(z) - y);
    const Vector xt = llt.solve(rhs);
    const Vector zt = A * xt;
    x = opt.alpha * xt + (1.0 - opt.alpha) * x;
    const Vector zr = opt.alpha * zt + (1.0 - opt.alpha) * z;
    const Vector z_new = project(zr + y.cwiseQuotient(rv));
    const Vector y_new = y + rv.cwiseProduct(zr - z_new);
    dy = y_new - y;
    y = y_new;
    z = z_new;
    res.iterations = it;

    const Vector Ax = A * x;
    const Vector Px = qp.P * x;
    const Vector Aty = A.transpose() * y;
    const double rp = InfNorm(Ax - z);
    const double rd = InfNorm(Px + qp.q + Aty);
    const double sp = std::max(InfNorm(Ax), InfNorm(z));
    const double sd = std::max({InfNorm(Px), InfNorm(Aty), q_norm});
    res.primal = rp;
    res.dual = rd;
    if (rp <= opt.eps * (1.0 + sp) && rd <= opt.eps * (1.0 + sd)) {
      res.status = OcpStatus::kOptimal;
      break;
    }
    if (it % opt.adapt_every == 0) {
      const double dy_norm = InfNorm(dy);
      if (dy_norm > 0.0) {
        const double tiny = 1e-7 * dy_norm;
        if (InfNorm(A.transpose() * dy) <= tiny &&
            Support(qp, dy, tiny) < -tiny) {
          res.status = OcpStatus::kInfeasible;
          break;
        }
      }
      const double ratio = std::sqrt((rp / std::max(sp, 1e-30)) /
                                     std::max(rd / std::max(sd, 1e-30), 1e-30));
      const double next = std::clamp(rho * ratio, 1e-6, 1e6);
      if (next > 5.0 * rho || next < 0.2 * rho) {
        rho = next;
        rv = rho_vector(rho);
        llt = factor(rv);
      }
    }
  }
  res.x = x;
  res.y = y;
  res.z = z;
  return res;
}

// Equality-constrained refinement on the active set identified by ADMM.
bool Polish(const Qp& qp, const AdmmResult& admm, Vector& x_out,
            double& primal, double& dual) {
  const Eigen::Index nw = qp.P.rows();
  const Eigen::Index r = qp.A_in.rows(), e = qp.A_eq.rows();
  if (qp.ellipsoid) {
    const Vector s = qp.A_ell * admm.x + qp.ell_shift;
    if (s.dot(qp.P_ell * s) >= qp.rho * (1.0 - 1e-7)) return false;
  }
  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < r; ++i) {
    if (qp.u_in(i) - admm.z(i) < admm.y(i)) active.push_back(i);
  }
  const Eigen::Index na = static_cast<Eigen::Index>(active.size()) + e;
  Matrix Aa(na, nw);
  Vector b(na);
  for (std::size_t k = 0; k < active.size(); ++k) {
    Aa.row(static_cast<Eigen::Index>(k)) = qp.A_in.row(active[k]);
    b(static_cast<Eigen::Index>(k)) = qp.u_in(active[k]);
  }
  Aa.bottomRows(e) = qp.A_eq;
  b.tail(e) = qp.b_eq;
  Matrix K = Matrix::Zero(nw + na, nw + na);
  K.topLeftCorner(nw, nw) = qp.P;
  K.topRightCorner(nw, na) = Aa.transpose();
  K.bottomLeftCorner(na, nw) = Aa;
  Vector rhs(nw + na);
  rhs << -qp.q, b;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(K);
  cod.setThreshold(1e-13);
  const Vector sol = cod.solve(rhs);
  const Vector x = sol.head(nw);
  const Vector nu = sol.tail(na);
  const double scale = 1.0 + InfNorm(qp.q) + InfNorm(b);
  const double kkt = InfNorm(K * sol - rhs);
  if (!x.allFinite() || kkt > 1e-9 * scale) return false;
  const double viol = r > 0 ? (qp.A_in * x - qp.u_in).maxCoeff() : -kInf;
  if (viol > 1e-9 * scale) return false;
  for (std::size_t k = 0; k < active.size(); ++k) {
    if (nu(static_cast<Eigen::Index>(k)) < -1e-9 * scale) return false;
  }
  if (qp.ellipsoid) {
    const Vector s = qp.A_ell * x + qp.ell_shift;
    if (s.dot(qp.P_ell * s) > qp.rho) return false;
  }
  x_out = x;
  primal = std::max(0.0, viol);
  if (e > 0) primal = std::max(primal, InfNorm(qp.A_eq * x - qp.b_eq));
  dual = kkt;
  return true;
}

}  // namespace

Matrix DiscreteOcp::StageWeight() const {
  Matrix W(n + m, n + m);
  W << Qd, Hd, Hd.transpose(), Rd;
  return W;
}

Vector DiscreteOcp::InputAt(const Vector& z, const Vector& w) const {
  return w - K_p * z;
}

DiscreteOcp Discretize(const ReducedOde& reduced, double T, int N,
                       const Matrix& K_p) {
  if (!(T > 0.0) || N < 1) {
    throw DimensionError(fmt::format("Discretize: need T > 0 and N >= 1 (T={}, N={})", T, N));
  }
  DiscreteOcp d;
  d.N = N;
  d.h = T / N;
  d.n = reduced.n_hat;
  d.m = reduced.m_hat;
  const Eigen::Index n = d.n, m = d.m;
  d.K_p = K_p.size() == 0 ? Matrix::Zero(m, n) : K_p;
  if (d.K_p.rows() != m || d.K_p.cols() != n) {
    throw DimensionError("Discretize: K_p must be m_hat x n_hat");
  }
  Matrix Aaug = Matrix::Zero(n + m, n + m);
  Aaug.topLeftCorner(n, n) = reduced.A_hat - reduced.B_hat * d.K_p;
  Aaug.topRightCorner(n, m) = reduced.B_hat;
  const Matrix F = Expm(Aaug * d.h);
  d.Ad = F.topLeftCorner(n, n);
  d.Bd = F.topRightCorner(n, m);
  // (z; v) = Tz (z; w).
  Matrix Tz = Matrix::Identity(n + m, n + m);
  Tz.bottomLeftCorner(m, n) = -d.K_p;
  const Matrix W =
      QuadraticIntegral(Aaug, Symmetrize(Tz.transpose() * reduced.S_hat * Tz), d.h);
  d.Qd = W.topLeftCorner(n, n);
  d.Hd = W.topRightCorner(n, m);
  d.Rd = W.bottomRightCorner(m, m);
  const Matrix C = reduced.constraint_rows * Tz;
  d.C_z = C.leftCols(n);
  d.C_w = C.rightCols(m);
  return d;
}

void AttachTerminal(DiscreteOcp& docp, const TerminalIngredients& ing) {
  if (ing.P_hat.rows() != docp.n || ing.K_gain.rows() != docp.m) {
    throw DimensionError("AttachTerminal: ingredients do not match the OCP");
  }
  docp.has_terminal = true;
  docp.P_term = ing.P_hat;
  docp.rho = ing.rho;
  docp.K_term = ing.K_gain;
}

const char* StatusName(OcpStatus status) {
  switch (status) {
    case OcpStatus::kOptimal:
      return "optimal";
    case OcpStatus::kMaxIter:
      return "max_iter";
    case OcpStatus::kInfeasible:
      return "infeasible";
  }
  return "unknown";
}

OcpSolution EvaluatePath(const DiscreteOcp& docp, const Vector& z1_0,
                         const Matrix& w_grid, bool use_terminal) {
  if (z1_0.size() != docp.n || w_grid.rows() != docp.m ||
      w_grid.cols() != docp.N) {
    throw DimensionError("EvaluatePath: shape mismatch");
  }
  OcpSolution s;
  s.w_grid = w_grid;
  s.v_grid.resize(docp.m, docp.N);
  s.z_grid.resize(docp.n, docp.N + 1);
  s.z_grid.col(0) = z1_0;
  const Matrix W = docp.StageWeight();
  for (int k = 0; k < docp.N; ++k) {
    const Vector z = s.z_grid.col(k);
    const Vector w = w_grid.col(k);
    Vector zw(docp.n + docp.m);
    zw << z, w;
    s.stage_cost += zw.dot(W * zw);
    s.v_grid.col(k) = docp.InputAt(z, w);
    s.z_grid.col(k + 1) = docp.Ad * z + docp.Bd * w;
  }
  if (use_terminal && docp.has_terminal && docp.n > 0) {
    const Vector zN = s.z_grid.col(docp.N);
    s.terminal_value = zN.dot(docp.P_term * zN);
  }
  s.cost = s.stage_cost + s.terminal_value;
  return s;
}

OcpSolution SolveUnconstrained(const DiscreteOcp& docp, const Vector& z1_0,
                               bool use_terminal) {
  const Eigen::Index n = docp.n, m = docp.m;
  if (z1_0.size() != n) throw DimensionError("SolveUnconstrained: z1_0 size");
  const bool terminal = use_terminal && docp.has_terminal && n > 0;
  Matrix S = terminal ? docp.P_term : Matrix::Zero(n, n);
  std::vector<Matrix> gains(docp.N);
  for (int k = docp.N - 1; k >= 0; --k) {
    const Matrix G = Symmetrize(docp.Rd + docp.Bd.transpose() * S * docp.Bd);
    const Matrix L = docp.Hd.transpose() + docp.Bd.transpose() * S * docp.Ad;
    Eigen::LDLT<Matrix> ldlt(G);
    if (m > 0 && (ldlt.info() != Eigen::Success || !ldlt.isPositive())) {
      throw NumericalError("SolveUnconstrained: input weight not positive");
    }
    gains[k] = m > 0 ? Matrix(ldlt.solve(L)) : Matrix(0, n);
    S = Symmetrize(docp.Qd + docp.Ad.transpose() * S * docp.Ad -
                   L.transpose() * gains[k]);
  }
  Matrix w(m, docp.N);
  Vector z = z1_0;
  for (int k = 0; k < docp.N; ++k) {
    w.col(k) = -gains[k] * z;
    z = docp.Ad * z + docp.Bd * w.col(k);
  }
  OcpSolution s = EvaluatePath(docp, z1_0, w, use_terminal);
  s.status = OcpStatus::kOptimal;
  return s;
}

OcpSolution SolveOcp(const DiscreteOcp& docp, const Vector& z1_0,
                     bool use_terminal, const OcpOptions& options) {
  if (z1_0.size() != docp.n) {
    throw DimensionError(fmt::format("SolveOcp: expected {} initial states, got {}",
                                     docp.n, z1_0.size()));
  }
  if (!z1_0.allFinite()) throw DimensionError("SolveOcp: non-finite z1_0");
  if (use_terminal && !docp.has_terminal) {
    throw DimensionError("SolveOcp: terminal ingredients are not attached");
  }
  if (docp.C_z.rows() == 0 && !use_terminal) {
    // Nothing to enforce: the dense QP and the recursion have the same optimum.
    return SolveUnconstrained(docp, z1_0, false);
  }
  const Qp qp = BuildQp(docp, z1_0, use_terminal);
  const Eigen::Index nw = qp.P.rows();
  if (qp.trivially_infeasible) {
    OcpSolution s = EvaluatePath(docp, z1_0, Matrix::Zero(docp.m, docp.N),
                                 use_terminal);
    s.status = OcpStatus::kInfeasible;
    s.primal_residual = qp.worst_constant_row - 1.0;
    s.message = "a constraint row is violated independently of the input";
    return s;
  }
  Vector x0 = Vector::Zero(nw);
  if (options.warm_w && options.warm_w->rows() == docp.m &&
      options.warm_w->cols() == docp.N) {
    x0 = Eigen::Map<const Vector>(options.warm_w->data(), nw);
  }
  OcpSolution s;
  Vector x;
  OcpStatus status;
  double primal, dual;
  int iterations = 0;
  bool polished = false;
  if (nw == 0) {
    x = x0;
    status = OcpStatus::kOptimal;
    primal = dual = 0.0;
    if (qp.ellipsoid) {
      const Vector e = qp.ell_shift;
      if (e.dot(qp.P_ell * e) > qp.rho * (1.0 + 1e-9)) {
        status = OcpStatus::kInfeasible;
      }
    }
  } else {
    const AdmmResult admm = RunAdmm(qp, options, x0);
    x = admm.x;
    status = admm.status;
    primal = admm.primal;
    dual = admm.dual;
    iterations = admm.iterations;
    if (options.polish && status != OcpStatus::kInfeasible) {
      Vector xp;
      double pp, dp;
      if (Polish(qp, admm, xp, pp, dp)) {
        x = xp;
        primal = pp;
        dual = dp;
        polished = true;
        status = OcpStatus::kOptimal;
      }
    }
  }
  const Matrix w = Eigen::Map<const Matrix>(x.data(), docp.m, docp.N);
  s = EvaluatePath(docp, z1_0, w, use_terminal);
  s.status = status;
  s.primal_residual = primal;
  s.dual_residual = dual;
  s.iterations = iterations;
  s.polished = polished;
  if (status == OcpStatus::kInfeasible) {
    s.message = "primal infeasibility certificate";
  } else if (status == OcpStatus::kMaxIter) {
    s.message = fmt::format("iteration cap reached (primal {:.2e}, dual {:.2e})",
                            primal, dual);
  }
  return s;
}

double InfiniteHorizonValue(const RiccatiSolution& sol, const Vector& z1_0) {
  if (z1_0.size() != sol.P_hat.rows()) {
    throw DimensionError("InfiniteHorizonValue: z1_0 size");
  }
  if (z1_0.size() == 0) return 0.0;
  return z1_0.dot(sol.P_hat * z1_0);
}

double BellmanResidual(const ReducedOde& reduced, const RiccatiSolution& sol,
                       const Vector& z1_0, double T, int N) {
  DiscreteOcp d = Discretize(reduced, T, N);
  d.has_terminal = true;
  d.P_term = sol.P_hat;
  d.K_term = sol.K_gain;
  d.rho = kInf;
  const OcpSolution s = SolveUnconstrained(d, z1_0, true);
  return std::abs(InfiniteHorizonValue(sol, z1_0) - s.cost);
}

}  // namespace daempc
