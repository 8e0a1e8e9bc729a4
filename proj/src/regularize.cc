#include "daempc/regularize.h"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "daempc/errors.h"

namespace daempc {
namespace {

Matrix HStack(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a;
  out.rightCols(b.cols()) = b;
  return out;
}

Matrix VStack(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

Matrix Inverse(const Matrix& M) {
  if (M.rows() == 0) return Matrix(0, 0);
  return M.partialPivLu().inverse();
}

// Rows of an observability staircase for (F, H) with H of full row rank:
// h_i F^j for j < eta_i, ordered chain by chain. Chains are grown in rounds
// (lowest power first), keeping a candidate only when it adds rank.
Matrix ObservabilityCrate(const Matrix& F, const Matrix& H,
                          std::vector<int>* eta) {
  const Eigen::Index n = F.rows();
  const Eigen::Index h = H.rows();
  eta->assign(h, 0);
  std::vector<bool> active(h, true);
  std::vector<Vector> power(h);
  for (Eigen::Index i = 0; i < h; ++i) power[i] = H.row(i).transpose();
  Matrix chosen(0, n);
  Eigen::Index total = 0;
  for (Eigen::Index j = 0; j < n && total < n; ++j) {
    bool grew = false;
    for (Eigen::Index i = 0; i < h && total < n; ++i) {
      if (!active[i]) continue;
      const Vector cand = power[i] / std::max(power[i].norm(), 1e-300);
      Matrix trial(total + 1, n);
      trial.topRows(total) = chosen;
      trial.row(total) = cand.transpose();
      if (power[i].norm() > 0.0 && NumericalRank(trial) == total + 1) {
        chosen = std::move(trial);
        ++total;
        ++(*eta)[i];
        power[i] = F.transpose() * power[i];
        grew = true;
      } else {
        active[i] = false;
      }
    }
    if (!grew) break;
  }
  if (total != n) {
    throw NumericalError(
        "unimodular regularization: overdetermined block is not observable");
  }
  Matrix theta(n, n);
  Eigen::Index row = 0;
  for (Eigen::Index i = 0; i < h; ++i) {
    Vector p = H.row(i).transpose();
    for (int j = 0; j < (*eta)[i]; ++j) {
      theta.row(row++) = p.transpose();
      p = F.transpose() * p;
    }
  }
  return theta;
}

}  // namespace

const char* RouteName(RegularizationRoute route) {
  return route == RegularizationRoute::kFeedback ? "feedback" : "unimodular";
}

FeedbackRegularization FeedbackRegularize(const DaeSystem& sys, long long seed) {
  sys.Validate();
  if (!IsRegular(sys) || !ImpulseControllable(sys)) {
    throw StructuralError(
        "feedback regularization requires a regular, impulse controllable "
        "system");
  }
  const Eigen::Index n = sys.states();
  const Eigen::Index m = sys.inputs();
  const Matrix Z = NullSpace(sys.E);
  auto accept = [&](const Matrix& K) {
    const Matrix Ak = sys.A + sys.B * K;
    Matrix M(n, n + Z.cols());
    M << sys.E, Ak * Z;
    return NumericalRank(M) == n && IsRegular(sys.E, Ak);
  };
  FeedbackRegularization out;
  const Matrix K0 = Matrix::Zero(m, n);
  if (accept(K0)) {
    out.K = K0;
  } else {
    bool found = false;
    for (long long attempt = 0; attempt < 10 && !found; ++attempt) {
      std::mt19937_64 rng(static_cast<std::uint64_t>(seed + attempt));
      std::normal_distribution<double> normal(0.0, 1.0);
      Matrix M(m, Z.cols());
      for (Eigen::Index j = 0; j < M.cols(); ++j) {
        for (Eigen::Index i = 0; i < M.rows(); ++i) M(i, j) = normal(rng);
      }
      const Matrix K = M * Z.transpose();
      if (accept(K)) {
        out.K = K;
        out.seed_used = seed + attempt;
        found = true;
      }
    }
    if (!found) {
      throw StructuralError(
          "feedback regularization failed after 10 draws; use the unimodular "
          "route");
    }
  }
  out.regularized = DaeSystem{sys.E, sys.A + sys.B * out.K, sys.B};
  return out;
}

bool VerifyUnimodular(const Matrix& U0, const Matrix& U1) {
  if (U0.rows() != U0.cols() || U1.rows() != U0.rows() ||
      U1.cols() != U0.cols()) {
    return false;
  }
  const Eigen::Index l = U0.rows();
  if (l == 0) return true;
  std::vector<double> dets;
  double bound = 0.0;
  for (Eigen::Index k = 0; k <= l; ++k) {
    const Matrix M = (static_cast<double>(k) + 0.5) * U1 + U0;
    dets.push_back(M.fullPivLu().determinant());
    double hadamard = 1.0;
    for (Eigen::Index j = 0; j < l; ++j) hadamard *= M.col(j).norm();
    bound = std::max(bound, hadamard);
  }
  double dmax = 0.0;
  for (double d : dets) dmax = std::max(dmax, std::abs(d));
  if (std::abs(dets[0]) <= 1e-12 * std::max(bound, 1e-300)) return false;
  for (double d : dets) {
    if (std::abs(d - dets[0]) > 1e-8 * dmax) return false;
  }
  return true;
}

UnimodularRegularization UnimodularRegularize(const DaeSystem& sys) {
  sys.Validate();
  const Eigen::Index l = sys.rows(), n = sys.states(), m = sys.inputs();
  UnimodularRegularization out;

  if (l == n && IsRegular(sys) && PencilIndex(sys.E, sys.A) <= 1) {
    out.T_hat = Matrix::Identity(n + m, n + m);
    out.U0 = Matrix::Identity(l, l);
    out.U1 = Matrix::Zero(l, l);
    out.E_r = sys.E;
    out.A_r = sys.A;
    out.B_r = sys.B;
    out.r = n;
    out.structure = ComputeKroneckerStructure(HStack(sys.E, Matrix::Zero(l, m)),
                                              HStack(sys.A, sys.B));
    return out;
  }

  const Matrix Eext = HStack(sys.E, Matrix::Zero(l, m));
  const Matrix Aext = HStack(sys.A, sys.B);
  const KroneckerStructure ks = ComputeKroneckerStructure(Eext, Aext);
  out.structure = ks;
  out.warnings = ks.warnings;
  const double sc = std::max({Eext.norm(), Aext.norm(), 1e-300});

  const Eigen::Index lU = ks.l_U, nU = ks.n_U, nJ = ks.n_J, nN = ks.n_N;
  const Eigen::Index lO = ks.l_O, nO = ks.n_O;
  const Eigen::Index kU = nU - lU;
  const Eigen::Index kO = lO - nO;
  const Matrix& Et = ks.E_form;
  const Matrix& At = ks.A_form;
  const Eigen::Index rJ = lU, rN = lU + nJ, rO = lU + nJ + nN;
  const Eigen::Index cJ = nU, cN = nU + nJ, cO = nU + nJ + nN;

  // Underdetermined part -> [sI - A1, -A2].
  const Matrix EU = Et.block(0, 0, lU, nU);
  const Matrix AU = At.block(0, 0, lU, nU);
  Matrix LU = Matrix(0, 0), RU = Matrix::Identity(nU, nU);
  if (lU > 0) {
    const auto d = RankDecompose(EU, {1e-10, sc});
    if (d.rank != lU) {
      throw NumericalError("unimodular regularization: E_U lost full row rank");
    }
    RU = HStack(d.corange_basis, d.null_basis);
    const Matrix M = d.range_basis.transpose() * EU * d.corange_basis;
    LU = M.partialPivLu().solve(d.range_basis.transpose());
  }
  const Matrix AUn = LU * AU * RU;
  const Matrix A1 = AUn.leftCols(lU);
  const Matrix A2 = AUn.rightCols(kU);

  // Finite part -> sI - J; infinite part -> sN - I.
  const Matrix LJ = Inverse(Et.block(rJ, cJ, nJ, nJ));
  const Matrix Jm = LJ * At.block(rJ, cJ, nJ, nJ);
  const Matrix LN = Inverse(At.block(rN, cN, nN, nN));
  const Matrix Nm = LN * Et.block(rN, cN, nN, nN);

  // Overdetermined part -> differential rows in observability-chain
  // coordinates followed by output rows (nonzero first).
  const Matrix EO = Et.block(rO, cO, lO, nO);
  const Matrix AO = At.block(rO, cO, lO, nO);
  Matrix LO = Matrix::Identity(lO, lO), RO = Matrix(0, 0);
  std::vector<int> eta;
  Eigen::Index h = 0;
  if (nO > 0) {
    const auto d = RankDecompose(EO, {1e-10, sc});
    if (d.rank != nO) {
      throw NumericalError("unimodular regularization: E_O lost full column rank");
    }
    const Matrix V1 = d.corange_basis;
    const Matrix M = d.range_basis.transpose() * EO * V1;
    const Matrix Minv_U1t = M.partialPivLu().solve(d.range_basis.transpose());
    const Matrix F = Minv_U1t * AO * V1;
    const Matrix Hfull = d.left_null_basis.transpose() * AO * V1;
    const auto dh = RankDecompose(Hfull, {1e-10, sc});
    h = dh.rank;
    const Matrix Uh = HStack(dh.range_basis, dh.left_null_basis);
    const Matrix H1 = dh.range_basis.transpose() * Hfull;
    const Matrix theta = ObservabilityCrate(F, H1, &eta);
    LO = VStack(theta * Minv_U1t, Uh.transpose() * d.left_null_basis.transpose());
    RO = V1 * Inverse(theta);
  }
  const Matrix EOn = LO * EO * RO;
  const Matrix AOn = LO * AO * RO;
  Matrix C = Matrix::Zero(lO, kO);
  {
    Eigen::Index col = 0, offset = 0;
    for (Eigen::Index i = 0; i < h; ++i) {
      offset += eta[i];
      C(offset - 1, col++) = 1.0;
    }
    for (Eigen::Index q = 0; q < kO - h; ++q) C(nO + h + q, col++) = 1.0;
  }

  // Reduced system, states ordered (z_U, x_J, x_N, y_O), inputs w_U.
  const Eigen::Index r = lU + nJ + nN + nO;
  out.r = r;
  out.E_r = Matrix::Zero(r, r);
  out.E_r.topLeftCorner(lU + nJ, lU + nJ).setIdentity();
  out.A_r = BlockDiag({A1, Jm, Matrix::Identity(nN, nN), Matrix::Identity(nO, nO)});
  out.B_r = Matrix::Zero(r, kU);
  out.B_r.topRows(lU) = A2;

  // Normalized column order (z_U, w_U, x_J, x_N, y_O) -> reduced order.
  Matrix P = Matrix::Zero(n + m, r + kU);
  for (Eigen::Index i = 0; i < lU; ++i) P(i, i) = 1;
  for (Eigen::Index i = 0; i < nJ; ++i) P(nU + i, lU + i) = 1;
  for (Eigen::Index i = 0; i < nN; ++i) P(cN + i, lU + nJ + i) = 1;
  for (Eigen::Index i = 0; i < nO; ++i) P(cO + i, lU + nJ + nN + i) = 1;
  for (Eigen::Index i = 0; i < kU; ++i) P(lU + i, r + i) = 1;
  const Matrix Rn = BlockDiag({RU, Matrix::Identity(nJ, nJ),
                               Matrix::Identity(nN, nN), RO});
  out.T_hat = ks.right_transform * Rn * P;

  // U''(s): rows in block order (U, J, N, O); columns (zero rows, U, J, N, O).
  Matrix V0 = Matrix::Zero(l, l), V1s = Matrix::Zero(l, l);
  V0.block(0, kO, lU, lU).setIdentity();
  V0.block(rJ, kO + lU, nJ, nJ).setIdentity();
  V0.block(rN, kO + lU + nJ, nN, nN).setIdentity();
  V1s.block(rN, kO + lU + nJ, nN, nN) = -Nm;
  V0.block(rO, 0, lO, kO) = C;
  V0.block(rO, kO + lU + nJ + nN, lO, nO) = AOn;
  V1s.block(rO, kO + lU + nJ + nN, lO, nO) = -EOn;
  const Matrix Ln = BlockDiag({LU, LJ, LN, LO});
  const Matrix Linv = Inverse(Ln * ks.left_transform);
  out.U0 = Linv * V0;
  out.U1 = Linv * V1s;

  // Coefficient-wise check of [sE - A, -B] T = U(s) [0; sE_r - A_r, -B_r].
  Matrix Er_ext = Matrix::Zero(l, r + kU), Ar_ext = Matrix::Zero(l, r + kU);
  Er_ext.block(kO, 0, r, r) = out.E_r;
  Ar_ext.block(kO, 0, r, r) = out.A_r;
  Ar_ext.block(kO, r, r, kU) = out.B_r;
  const Matrix C1 = Eext * out.T_hat;
  const Matrix C0 = -Aext * out.T_hat;
  const double scale =
      (out.U0.norm() + out.U1.norm()) * (Er_ext.norm() + Ar_ext.norm()) +
      C1.norm() + C0.norm() + 1.0;
  out.identity_residual =
      std::max({(out.U1 * Er_ext).norm(),
                (out.U0 * Er_ext - out.U1 * Ar_ext - C1).norm(),
                (-out.U0 * Ar_ext - C0).norm()}) /
      scale;
  if (out.identity_residual > 1e-10) {
    throw NumericalError(fmt::format(
        "unimodular regularization: factorization identity violated ({:.3e})",
        out.identity_residual));
  }
  if (!VerifyUnimodular(out.U0, out.U1)) {
    throw NumericalError("unimodular regularization: U(s) is not unimodular");
  }
  if (kO > 0) {
    out.warnings.push_back(fmt::format(
        "extended pencil has {} overdetermined block(s); their variables are "
        "fixed to zero and the initial-value map is checked numerically",
        kO));
  }
  return out;
}

Index1Form Index1ToOde(const DaeSystem& sys) {
  sys.Validate();
  if (!IsRegular(sys)) {
    throw StructuralError("index-1 reduction: regular pencil required");
  }
  const Eigen::Index n = sys.states();
  const auto d = RankDecompose(sys.E);
  Index1Form f;
  f.n_hat = d.rank;
  const Eigen::Index nh = f.n_hat, na = n - nh;
  const Matrix sigma = d.range_basis.transpose() * sys.E * d.corange_basis;
  f.S_r = VStack(d.range_basis.transpose(), d.left_null_basis.transpose());
  f.T_r = HStack(d.corange_basis * Inverse(sigma), d.null_basis);
  const Matrix At = f.S_r * sys.A * f.T_r;
  const Matrix Bt = f.S_r * sys.B;
  f.A11 = At.topLeftCorner(nh, nh);
  f.A12 = At.topRightCorner(nh, na);
  f.A21 = At.bottomLeftCorner(na, nh);
  f.A22 = At.bottomRightCorner(na, na);
  f.B1 = Bt.topRows(nh);
  f.B2 = Bt.bottomRows(na);
  if (na > 0) {
    const int rank = NumericalRank(f.A22);
    f.a22_condition = ConditionNumber(f.A22);
    if (rank < na || f.a22_condition > 1e12) {
      throw StructuralError(fmt::format(
          "index-1 reduction: A22 is numerically singular (rank gap {}, "
          "condition {:.3e}); the pencil has index greater than one",
          na - rank, f.a22_condition));
    }
  }
  return f;
}

ReducedOde BuildReducedOde(const DaeSystem& sys, const ConstraintSet& cons,
                           const Matrix& S, long long seed) {
  sys.Validate();
  const Eigen::Index l = sys.rows(), n = sys.states(), m = sys.inputs();
  cons.Validate(n, m);
  if (S.rows() != n + m || S.cols() != n + m) {
    throw DimensionError("cost matrix S must be (n+m) x (n+m)");
  }
  ReducedOde red;
  red.n = n;
  red.m = m;

  Matrix T_reg;
  bool use_feedback = false;
  if (IsRegular(sys) && ImpulseControllable(sys)) {
    try {
      red.feedback = FeedbackRegularize(sys, seed);
      use_feedback = true;
    } catch (const StructuralError& e) {
      red.warnings.push_back(e.what());
    }
  }
  if (use_feedback) {
    red.route = RegularizationRoute::kFeedback;
    red.regularized = red.feedback->regularized;
    T_reg = Matrix::Identity(n + m, n + m);
    T_reg.bottomLeftCorner(m, n) = red.feedback->K;
  } else {
    red.route = RegularizationRoute::kUnimodular;
    red.unimodular = UnimodularRegularize(sys);
    for (const auto& w : red.unimodular->warnings) red.warnings.push_back(w);
    red.regularized = DaeSystem{red.unimodular->E_r, red.unimodular->A_r,
                                red.unimodular->B_r};
    T_reg = red.unimodular->T_hat;
  }
  const Eigen::Index r = red.regularized.states();
  const Eigen::Index mh = red.regularized.inputs();
  Index1Form f = Index1ToOde(red.regularized);
  const Eigen::Index nh = f.n_hat, na = r - nh;
  red.n_hat = nh;
  red.m_hat = mh;

  const Matrix A22inv = Inverse(f.A22);
  red.A_hat = f.A11 - f.A12 * A22inv * f.A21;
  red.B_hat = f.B1 - f.A12 * A22inv * f.B2;
  red.T_hat_total = T_reg * BlockDiag({f.T_r, Matrix::Identity(mh, mh)});
  Matrix lift = Matrix::Zero(r + mh, nh + mh);
  lift.topLeftCorner(nh, nh).setIdentity();
  lift.block(nh, 0, na, nh) = -A22inv * f.A21;
  lift.block(nh, nh, na, mh) = -A22inv * f.B2;
  lift.bottomRightCorner(mh, mh).setIdentity();
  red.X = red.T_hat_total * lift;

  // Choose z1 as orthonormal coordinates of E x, aligned with the standard
  // basis of R^l where the range allows it.
  Matrix Y(l, 0);
  if (nh > 0) {
    const Matrix Mz = sys.E * red.X.topRows(n).leftCols(nh);
    const auto dz = RankDecompose(Mz, {1e-10, sys.E.norm() * red.X.norm()});
    if (dz.rank == nh) {
      const Matrix Pi = dz.range_basis * dz.range_basis.transpose();
      Eigen::ColPivHouseholderQR<Matrix> qr(Pi);
      const auto perm = qr.colsPermutation().indices();
      Matrix picked(l, nh);
      for (Eigen::Index i = 0; i < nh; ++i) picked.col(i) = Pi.col(perm(i));
      Eigen::HouseholderQR<Matrix> gs(picked);
      Y = gs.householderQ() * Matrix::Identity(l, nh);
      for (Eigen::Index i = 0; i < nh; ++i) {
        if (Y(perm(i), i) < 0.0) Y.col(i) = -Y.col(i);
      }
      const Matrix H = Y.transpose() * Mz;
      const Matrix Hinv = Inverse(H);
      red.A_hat = H * red.A_hat * Hinv;
      red.B_hat = H * red.B_hat;
      red.X.leftCols(nh) = red.X.leftCols(nh) * Hinv;
      red.T_hat_total.leftCols(nh) = red.T_hat_total.leftCols(nh) * Hinv;
      f.A11 = H * f.A11 * Hinv;
      f.A12 = H * f.A12;
      f.A21 = f.A21 * Hinv;
      f.B1 = H * f.B1;
      f.T_r.leftCols(nh) = f.T_r.leftCols(nh) * Hinv;
      f.S_r.topRows(nh) = H * f.S_r.topRows(nh);
    } else {
      red.warnings.push_back("E x does not determine the reduced state");
    }
  }
  red.index1 = f;

  red.init_selector = Matrix::Zero(nh, n + m);
  if (Y.cols() == nh) {
    red.init_selector.leftCols(n) = Y.transpose() * sys.E;
  } else {
    red.init_selector = Inverse(red.T_hat_total).topRows(nh);
    red.init_selector.rightCols(m).setZero();
  }
  if (mh > 0 && nh > 0) {
    const Matrix Mv = sys.E * red.X.topRows(n).rightCols(mh);
    if (Mv.norm() > 1e-9 * std::max(1.0, sys.E.norm() * red.X.norm())) {
      red.warnings.push_back("E x depends on the reduced input");
    }
  }

  const Matrix Tinv = Inverse(red.T_hat_total);
  red.X_left_inverse = VStack(Tinv.topRows(nh), Tinv.bottomRows(mh));

  red.S_hat = red.X.transpose() * S * red.X;
  red.S_hat = Symmetrize(red.S_hat);
  red.Q_hat = red.S_hat.topLeftCorner(nh, nh);
  red.H_hat = red.S_hat.topRightCorner(nh, mh);
  red.R_hat = red.S_hat.bottomRightCorner(mh, mh);
  red.constraint_rows = HStack(cons.F, cons.G) * red.X;
  return red;
}

std::pair<Matrix, Matrix> LiftTrajectory(const ReducedOde& reduced,
                                         const Matrix& z1_path,
                                         const Matrix& v_path) {
  if (z1_path.rows() != reduced.n_hat || v_path.rows() != reduced.m_hat ||
      z1_path.cols() != v_path.cols()) {
    throw DimensionError("LiftTrajectory: path dimensions do not match");
  }
  const Matrix xu = reduced.X * VStack(z1_path, v_path);
  return {xu.topRows(reduced.n), xu.bottomRows(reduced.m)};
}

Vector InitialReducedState(const ReducedOde& reduced, const Vector& x0) {
  if (x0.size() != reduced.n) {
    throw DimensionError("initial state has the wrong dimension");
  }
  Vector xu = Vector::Zero(reduced.n + reduced.m);
  xu.head(reduced.n) = x0;
  return reduced.init_selector * xu;
}

bool IsWeaklyConsistent(const DaeSystem& sys, const ReducedOde& reduced,
                        const Vector& x0) {
  return IsWeaklyConsistent(sys, reduced.X, x0);
}

Vector StateFromMeasurement(const DaeSystem& sys, const Vector& Ex0) {
  if (Ex0.size() != sys.rows()) {
    throw DimensionError(fmt::format("measured E x0 needs {} entries, got {}",
                                     sys.rows(), Ex0.size()));
  }
  if (sys.states() == 0) return Vector(0);
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(sys.E);
  cod.setThreshold(1e-12);
  const Vector x0 = cod.solve(Ex0);
  if ((sys.E * x0 - Ex0).norm() > 1e-9 * std::max(1.0, Ex0.norm())) {
    throw DimensionError("measured E x0 is not in the range of E");
  }
  return x0;
}

}  // namespace daempc
