// Quasi-Kronecker form through the Wong sequences of the pencil.
//
//   V*: V_0 = R^n,  V_{i+1} = A^{-1}(E V_i)
//   W*: W_0 = {0},  W_{i+1} = E^{-1}(A W_i)
//
// Column blocks: V* cap W* (underdetermined), the rest of V* (finite), the
// rest of W* (infinite), a complement of V* + W* (overdetermined). Row
// blocks are nested orthonormal bases of E S + A S, E V*, E V* + A W*, R^l.
// In these coordinates the pencil is block upper triangular; the
// off-diagonal blocks are removed by generalized Sylvester solves.

#include <algorithm>
#include <array>
#include <functional>

#include "daempc/errors.h"
#include "daempc/pencil.h"

namespace daempc {
namespace {

Matrix Kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

Matrix HStack(const Matrix& a, const Matrix& b) {
  Matrix out(std::max(a.rows(), b.rows()), a.cols() + b.cols());
  if (a.cols() > 0) out.leftCols(a.cols()) = a;
  if (b.cols() > 0) out.rightCols(b.cols()) = b;
  return out;
}

class Ranker {
 public:
  Ranker(RankTolerance tol, KroneckerStructure* ks) : tol_(tol), ks_(ks) {}

  RankDecomposition operator()(const Matrix& M, double scale) {
    RankDecomposition d = RankDecompose(M, {tol_.rtol, std::max(scale, tol_.scale)});
    if (d.marginal && !ks_->ill_posed) {
      ks_->ill_posed = true;
      ks_->warnings.push_back(
          "ill-posed structure: a rank decision was within a factor 10 of the "
          "threshold");
    }
    return d;
  }

 private:
  RankTolerance tol_;
  KroneckerStructure* ks_;
};

// Orthonormal basis of the part of span(M) orthogonal to span(Q).
Matrix OrthAfter(Ranker& rank, const Matrix& Q, const Matrix& M, double scale) {
  Matrix R = M;
  if (Q.cols() > 0) R -= Q * (Q.transpose() * M);
  if (R.cols() == 0) return Matrix(M.rows(), 0);
  return rank(R, scale).range_basis;
}

std::vector<int> SortedDescending(std::vector<int> v) {
  std::sort(v.begin(), v.end(), std::greater<int>());
  return v;
}

}  // namespace

KroneckerStructure ComputeKroneckerStructure(const Matrix& E, const Matrix& A,
                                             RankTolerance tol) {
  if (E.rows() != A.rows() || E.cols() != A.cols()) {
    throw DimensionError("ComputeKroneckerStructure: E and A differ in shape");
  }
  KroneckerStructure ks;
  Ranker rank(tol, &ks);
  const Eigen::Index l = E.rows();
  const Eigen::Index n = E.cols();
  const double sc = std::max({E.norm(), A.norm(), 1e-300});

  // V*.
  Matrix V = Matrix::Identity(n, n);
  for (Eigen::Index it = 0; it <= n + 1; ++it) {
    const Matrix perp = rank(E * V, sc).left_null_basis;
    Matrix next = perp.cols() == 0 ? Matrix(Matrix::Identity(n, n))
                                   : rank(perp.transpose() * A, sc).null_basis;
    const bool done = next.cols() == V.cols();
    V = std::move(next);
    if (done) break;
  }
  // W*.
  Matrix W(n, 0);
  for (Eigen::Index it = 0; it <= n + 1; ++it) {
    const Matrix perp = rank(A * W, sc).left_null_basis;
    Matrix next = perp.cols() == 0 ? Matrix(Matrix::Identity(n, n))
                                   : rank(perp.transpose() * E, sc).null_basis;
    const bool done = next.cols() == W.cols();
    W = std::move(next);
    if (done) break;
  }

  // Column blocks.
  Matrix S(n, 0);
  if (V.cols() > 0 && W.cols() > 0) {
    const Matrix coeff = rank(HStack(V, -W), 1.0).null_basis;
    if (coeff.cols() > 0) {
      S = rank(V * coeff.topRows(V.cols()), 1.0).range_basis;
    }
  }
  const Matrix R1 = OrthAfter(rank, S, V, 1.0);
  const Matrix R2 = OrthAfter(rank, S, W, 1.0);
  const Matrix Q1 = rank(HStack(V, W), 1.0).left_null_basis;
  ks.n_U = S.cols();
  ks.n_J = R1.cols();
  ks.n_N = R2.cols();
  ks.n_O = Q1.cols();
  if (ks.n_U + ks.n_J + ks.n_N + ks.n_O != n) {
    throw NumericalError("quasi-Kronecker form: inconsistent column block sizes");
  }

  // Row blocks.
  const Matrix Y1 = rank(HStack(E * S, A * S), sc).range_basis;
  const Matrix Y2 = OrthAfter(rank, Y1, E * V, sc);
  const Matrix Y12 = HStack(Y1, Y2);
  const Matrix Y3 = OrthAfter(rank, Y12, A * W, sc);
  const Matrix Y123 = HStack(Y12, Y3);
  const Matrix Y4 = rank(Y123, 1.0).left_null_basis;
  ks.l_U = Y1.cols();
  ks.l_O = Y4.cols();
  if (Y2.cols() != ks.n_J || Y3.cols() != ks.n_N) {
    throw NumericalError("quasi-Kronecker form: inconsistent row block sizes");
  }

  Matrix Lt(l, l);
  Lt << Y1.transpose(), Y2.transpose(), Y3.transpose(), Y4.transpose();
  Matrix Rt(n, n);
  Rt << S, R1, R2, Q1;
  Matrix Et = Lt * E * Rt;
  Matrix At = Lt * A * Rt;

  const std::array<Eigen::Index, 4> rs{ks.l_U, ks.n_J, ks.n_N, ks.l_O};
  const std::array<Eigen::Index, 4> cs{ks.n_U, ks.n_J, ks.n_N, ks.n_O};
  std::array<Eigen::Index, 4> r0{}, c0{};
  for (int b = 1; b < 4; ++b) {
    r0[b] = r0[b - 1] + rs[b - 1];
    c0[b] = c0[b - 1] + cs[b - 1];
  }
  // Below-diagonal blocks vanish in exact arithmetic.
  double lower = 0.0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < i; ++j) {
      lower = std::max({lower, Et.block(r0[i], c0[j], rs[i], cs[j]).norm(),
                        At.block(r0[i], c0[j], rs[i], cs[j]).norm()});
      Et.block(r0[i], c0[j], rs[i], cs[j]).setZero();
      At.block(r0[i], c0[j], rs[i], cs[j]).setZero();
    }
  }
  if (lower > 1e-8 * sc) {
    ks.warnings.push_back("quasi-Kronecker form: staircase residual above 1e-8");
  }

  // Decouple block (i, j), i < j: E_ii X + Y E_jj = -E_ij, A_ii X + Y A_jj = -A_ij.
  for (int j = 1; j < 4; ++j) {
    for (int i = j - 1; i >= 0; --i) {
      const Eigen::Index ri = rs[i], ci = cs[i], rj = rs[j], cj = cs[j];
      if (ri * cj == 0) continue;
      const Matrix Eij = Et.block(r0[i], c0[j], ri, cj);
      const Matrix Aij = At.block(r0[i], c0[j], ri, cj);
      if (Eij.norm() == 0.0 && Aij.norm() == 0.0) continue;
      const Matrix Eii = Et.block(r0[i], c0[i], ri, ci);
      const Matrix Aii = At.block(r0[i], c0[i], ri, ci);
      const Matrix Ejj = Et.block(r0[j], c0[j], rj, cj);
      const Matrix Ajj = At.block(r0[j], c0[j], rj, cj);
      const Eigen::Index nx = ci * cj, ny = ri * rj, ne = ri * cj;
      Matrix K = Matrix::Zero(2 * ne, nx + ny);
      const Matrix Icj = Matrix::Identity(cj, cj);
      const Matrix Iri = Matrix::Identity(ri, ri);
      if (nx > 0) {
        K.block(0, 0, ne, nx) = Kron(Icj, Eii);
        K.block(ne, 0, ne, nx) = Kron(Icj, Aii);
      }
      if (ny > 0) {
        K.block(0, nx, ne, ny) = Kron(Ejj.transpose(), Iri);
        K.block(ne, nx, ne, ny) = Kron(Ajj.transpose(), Iri);
      }
      Vector rhs(2 * ne);
      rhs << -Eigen::Map<const Vector>(Eij.data(), ne),
          -Eigen::Map<const Vector>(Aij.data(), ne);
      Eigen::CompleteOrthogonalDecomposition<Matrix> cod(K);
      cod.setThreshold(1e-12);
      const Vector sol = cod.solve(rhs);
      if ((K * sol - rhs).norm() > 1e-9 * sc * (1.0 + sol.norm())) {
        throw NumericalError("quasi-Kronecker form: decoupling equation has no solution");
      }
      const Matrix X = Eigen::Map<const Matrix>(sol.data(), ci, cj);
      const Matrix Y = Eigen::Map<const Matrix>(sol.data() + nx, ri, rj);
      if (nx > 0) {
        Rt.middleCols(c0[j], cj) += Rt.middleCols(c0[i], ci) * X;
        Et.middleCols(c0[j], cj) += Et.middleCols(c0[i], ci) * X;
        At.middleCols(c0[j], cj) += At.middleCols(c0[i], ci) * X;
      }
      if (ny > 0) {
        Lt.middleRows(r0[i], ri) += Y * Lt.middleRows(r0[j], rj);
        Et.middleRows(r0[i], ri) += Y * Et.middleRows(r0[j], rj);
        At.middleRows(r0[i], ri) += Y * At.middleRows(r0[j], rj);
      }
      Et.block(r0[i], c0[j], ri, cj).setZero();
      At.block(r0[i], c0[j], ri, cj).setZero();
    }
  }
  ks.left_transform = Lt;
  ks.right_transform = Rt;
  ks.E_form = Et;
  ks.A_form = At;
  ks.left_condition = ConditionNumber(Lt);
  ks.right_condition = ConditionNumber(Rt);

  const Matrix EJ = Et.block(r0[1], c0[1], ks.n_J, ks.n_J);
  const Matrix AJ = At.block(r0[1], c0[1], ks.n_J, ks.n_J);
  const Matrix EN = Et.block(r0[2], c0[2], ks.n_N, ks.n_N);
  const Matrix AN = At.block(r0[2], c0[2], ks.n_N, ks.n_N);
  ks.J = ks.n_J > 0 ? Matrix(EJ.partialPivLu().solve(AJ)) : Matrix(0, 0);
  ks.N = ks.n_N > 0 ? Matrix(AN.partialPivLu().solve(EN)) : Matrix(0, 0);
  ks.nilpotency_index = NilpotencyIndex(ks.N);

  // Minimal indices from the normalized outer blocks.
  if (ks.n_U > 0) {
    const Matrix EU = Et.block(0, 0, ks.l_U, ks.n_U);
    const Matrix AU = At.block(0, 0, ks.l_U, ks.n_U);
    Matrix A1(ks.l_U, ks.l_U), A2(ks.l_U, ks.n_U - ks.l_U);
    if (ks.l_U > 0) {
      const auto d = RankDecompose(EU, {tol.rtol, sc});
      Matrix R(ks.n_U, ks.n_U);
      R << d.corange_basis, d.null_basis;
      const Matrix M = d.range_basis.transpose() * EU * d.corange_basis;
      const Matrix L = M.partialPivLu().solve(d.range_basis.transpose());
      const Matrix Ap = L * AU * R;
      A1 = Ap.leftCols(ks.l_U);
      A2 = Ap.rightCols(ks.n_U - ks.l_U);
    }
    std::vector<int> idx = ControllabilityIndices(A1, A2, {tol.rtol, 0.0});
    for (int& v : idx) v += 1;
    ks.underdetermined_column_indices = SortedDescending(idx);
  }
  if (ks.l_O > 0) {
    const Matrix EO = Et.block(r0[3], c0[3], ks.l_O, ks.n_O);
    const Matrix AO = At.block(r0[3], c0[3], ks.l_O, ks.n_O);
    Matrix F(ks.n_O, ks.n_O), H(ks.l_O - ks.n_O, ks.n_O);
    if (ks.n_O > 0) {
      const auto d = RankDecompose(EO, {tol.rtol, sc});
      const Matrix M = d.range_basis.transpose() * EO * d.corange_basis;
      const Matrix Lr = M.partialPivLu().solve(d.range_basis.transpose());
      F = Lr * AO * d.corange_basis;
      H = d.left_null_basis.transpose() * AO * d.corange_basis;
    }
    std::vector<int> idx =
        ControllabilityIndices(F.transpose(), H.transpose(), {tol.rtol, 0.0});
    for (int& v : idx) v += 1;
    ks.overdetermined_row_indices = SortedDescending(idx);
  }
  return ks;
}

}  // namespace daempc
