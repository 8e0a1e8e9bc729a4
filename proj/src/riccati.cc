#include "daempc/riccati.h"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "daempc/errors.h"

namespace daempc {
namespace {

struct Reduced {
  Matrix At;  // A - B R^{-1} H^T
  Matrix Qt;  // Q - H R^{-1} H^T
  Matrix G;   // B R^{-1} B^T
};

Reduced EliminateCrossTerm(const LqData& lq) {
  Eigen::LLT<Matrix> chol(lq.R);
  if (lq.inputs() > 0 && chol.info() != Eigen::Success) {
    throw NumericalError("CARE failure: R_hat is not positive definite");
  }
  Reduced r;
  if (lq.inputs() == 0) {
    r.At = lq.A;
    r.Qt = lq.Q;
    r.G = Matrix::Zero(lq.states(), lq.states());
    return r;
  }
  const Matrix RinvHt = chol.solve(lq.H.transpose());
  const Matrix RinvBt = chol.solve(lq.B.transpose());
  r.At = lq.A - lq.B * RinvHt;
  r.Qt = Symmetrize(lq.Q - lq.H * RinvHt);
  r.G = Symmetrize(lq.B * RinvBt);
  return r;
}

Matrix Gain(const LqData& lq, const Matrix& P) {
  if (lq.inputs() == 0) return Matrix(0, lq.states());
  return lq.R.llt().solve(lq.B.transpose() * P + lq.H.transpose());
}

double SymNorm(const Matrix& M) { return M.size() == 0 ? 0.0 : M.norm(); }

}  // namespace

Matrix LqData::S() const {
  const Eigen::Index n = states(), m = inputs();
  Matrix out(n + m, n + m);
  out.topLeftCorner(n, n) = Q;
  out.topRightCorner(n, m) = H;
  out.bottomLeftCorner(m, n) = H.transpose();
  out.bottomRightCorner(m, m) = R;
  return out;
}

LqData LqFromReduced(const ReducedOde& reduced) {
  return LqData{reduced.A_hat, reduced.B_hat, reduced.Q_hat, reduced.H_hat,
                reduced.R_hat};
}

double CareResidual(const LqData& lq, const Matrix& P) {
  if (lq.states() == 0) return 0.0;
  Matrix res = lq.A.transpose() * P + P * lq.A + lq.Q;
  if (lq.inputs() > 0) {
    const Matrix PBH = P * lq.B + lq.H;
    res -= PBH * lq.R.llt().solve(PBH.transpose());
  }
  return res.norm();
}

Matrix RefineCare(const LqData& lq, const Matrix& P0, int sweeps) {
  const Reduced r = EliminateCrossTerm(lq);
  Matrix P = P0;
  for (int k = 0; k < sweeps; ++k) {
    const Matrix Ak = r.At - r.G * P;
    P = Symmetrize(SolveLyapunov(Ak, r.Qt + P * r.G * P));
  }
  return P;
}

RiccatiSolution SolveCare(const LqData& lq) {
  const Eigen::Index n = lq.states();
  RiccatiSolution sol;
  if (n == 0) {
    sol.P_hat = Matrix(0, 0);
    sol.K_gain = Matrix(lq.inputs(), 0);
    return sol;
  }
  const Reduced r = EliminateCrossTerm(lq);
  Matrix Ham(2 * n, 2 * n);
  Ham << r.At, -r.G, -r.Qt, -r.At.transpose();
  Matrix Z;
  try {
    Z = MatrixSign(Ham);
  } catch (const NumericalError& e) {
    throw NumericalError(fmt::format(
        "CARE failure: imaginary-axis Hamiltonian spectrum ({})", e.what()));
  }
  const Matrix stable =
      Orth(Z - Matrix::Identity(2 * n, 2 * n), {1e-10, 1.0});
  if (stable.cols() != n) {
    throw NumericalError(fmt::format(
        "CARE failure: stable subspace has dimension {} instead of {}",
        stable.cols(), n));
  }
  const Matrix U1 = stable.topRows(n);
  const Matrix U2 = stable.bottomRows(n);
  Eigen::FullPivLU<Matrix> lu(U1.transpose());
  if (!lu.isInvertible() || lu.rcond() < 1e-13) {
    throw NumericalError("CARE failure: singular subspace solve");
  }
  Matrix P = Symmetrize(lu.solve(U2.transpose()).transpose());
  sol.residual_trace.push_back(CareResidual(lq, P));
  for (int sweep = 0; sweep < 2; ++sweep) {
    Matrix next;
    try {
      next = RefineCare(lq, P, 1);
    } catch (const NumericalError&) {
      break;
    }
    const double res = CareResidual(lq, next);
    if (!next.allFinite() || res > sol.residual_trace.back()) break;
    P = next;
    sol.residual_trace.push_back(res);
  }
  sol.P_hat = P;
  sol.residual_norm = CareResidual(lq, P);
  sol.lambda_min = SymEigvals(P)(0);
  if (!(sol.lambda_min > 0.0)) {
    throw NumericalError(fmt::format(
        "CARE failure: P_hat not positive definite (lambda_min = {:.3e}, "
        "residual trace {})",
        sol.lambda_min, fmt::join(sol.residual_trace, ", ")));
  }
  sol.K_gain = Gain(lq, P);
  return sol;
}

RiccatiSolution SolveCare(const ReducedOde& reduced) {
  return SolveCare(LqFromReduced(reduced));
}

bool CertifyClosedLoop(const LqData& lq, const RiccatiSolution& sol) {
  const Eigen::Index n = lq.states();
  if (n == 0) return true;
  Matrix Acl = lq.A;
  if (lq.inputs() > 0) Acl -= lq.B * sol.K_gain;
  try {
    const Matrix Y = SolveLyapunov(Acl, Matrix::Identity(n, n));
    return SymEigvals(Y)(0) > 0.0;
  } catch (const NumericalError&) {
    return false;
  }
}

bool CertifyClosedLoop(const ReducedOde& reduced, const RiccatiSolution& sol) {
  return CertifyClosedLoop(LqFromReduced(reduced), sol);
}

AssumptionReport CheckAssumptions(const LqData& lq) {
  AssumptionReport rep;
  const Eigen::Index n = lq.states(), m = lq.inputs();
  const Matrix S = lq.S();
  const double s_norm = std::max(SymNorm(S), 1e-300);
  if (S.size() > 0) {
    rep.s_min_eigenvalue = SymEigvals(S)(0);
    rep.s_psd = rep.s_min_eigenvalue >= -1e-10 * s_norm;
  } else {
    rep.s_psd = true;
  }
  if (!rep.s_psd) {
    rep.details.push_back(fmt::format("S_hat has eigenvalue {:.3e} < 0",
                                      rep.s_min_eigenvalue));
  }
  if (m > 0) {
    rep.r_min_eigenvalue = SymEigvals(lq.R)(0);
    rep.r_pd = rep.r_min_eigenvalue > 1e-10 * std::max(SymNorm(lq.R), 1e-300);
  } else {
    rep.r_min_eigenvalue = std::numeric_limits<double>::infinity();
    rep.r_pd = true;
  }
  if (!rep.r_pd) {
    rep.details.push_back(fmt::format("R_hat has smallest eigenvalue {:.3e}",
                                      rep.r_min_eigenvalue));
  }
  // rank S_hat against the block-diagonal part diag(Q_hat, R_hat).
  const RankTolerance tol{1e-10, s_norm};
  rep.rank_S = S.size() > 0 ? NumericalRank(S, tol) : 0;
  rep.rank_Q = n > 0 ? NumericalRank(lq.Q, tol) : 0;
  rep.rank_R = m > 0 ? NumericalRank(lq.R, tol) : 0;
  rep.rank_match = rep.rank_S == rep.rank_Q + rep.rank_R;
  if (!rep.rank_match) {
    rep.details.push_back(fmt::format("rank S_hat = {} but rank Q_hat + rank R_hat = {}",
                                      rep.rank_S, rep.rank_Q + rep.rank_R));
  }
  if (n > 0) {
    Matrix obs(n * n, n);
    Matrix block = lq.Q;
    for (Eigen::Index k = 0; k < n; ++k) {
      obs.middleRows(k * n, n) = block;
      block = block * lq.A;
    }
    rep.observability_rank = NumericalRank(obs);
    rep.observable = rep.observability_rank == n;
  } else {
    rep.observable = true;
  }
  if (!rep.observable) {
    rep.details.push_back(fmt::format("observability rank {} < {}",
                                      rep.observability_rank, n));
  }
  rep.stabilizable = false;
  if (rep.r_pd) {
    try {
      const RiccatiSolution sol = SolveCare(lq);
      rep.stabilizable = CertifyClosedLoop(lq, sol);
    } catch (const NumericalError& e) {
      rep.details.push_back(e.what());
    }
  }
  if (!rep.stabilizable) {
    rep.details.push_back("no stabilizing Riccati solution was certified");
  }
  return rep;
}

AssumptionReport CheckAssumptions(const ReducedOde& reduced) {
  return CheckAssumptions(LqFromReduced(reduced));
}

}  // namespace daempc
