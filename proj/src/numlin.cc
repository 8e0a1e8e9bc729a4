#include "daempc/numlin.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "daempc/errors.h"

namespace daempc {
namespace {

// Orthonormal completion of the columns of Q (d x k, orthonormal) to a basis
// of R^d; returns the d x (d - k) complement.
Matrix Complement(const Matrix& Q, Eigen::Index d) {
  const Eigen::Index k = Q.cols();
  if (k == 0) return Matrix::Identity(d, d);
  if (k >= d) return Matrix(d, 0);
  Eigen::HouseholderQR<Matrix> qr(Q);
  Matrix full = qr.householderQ() * Matrix::Identity(d, d);
  return full.rightCols(d - k);
}

struct JacobiSvd {
  Matrix left;   // rows x cols, columns are sigma_i * u_i
  Vector sigma;  // unsorted
  Matrix right;  // cols x cols orthogonal
};

// One-sided (Hestenes) Jacobi on the columns of M. Requires rows >= cols for
// the rotated columns to carry the full singular spectrum.
JacobiSvd OneSidedJacobi(const Matrix& M) {
  JacobiSvd out;
  out.left = M;
  const Eigen::Index n = M.cols();
  out.right = Matrix::Identity(n, n);
  constexpr double kEps = 1e-15;
  for (int sweep = 0; sweep < 80; ++sweep) {
    bool rotated = false;
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double alpha = out.left.col(i).squaredNorm();
        const double beta = out.left.col(j).squaredNorm();
        const double gamma = out.left.col(i).dot(out.left.col(j));
        if (gamma == 0.0 || std::abs(gamma) <= kEps * std::sqrt(alpha * beta)) {
          continue;
        }
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Matrix* W : {&out.left, &out.right}) {
          Vector ci = W->col(i);
          Vector cj = W->col(j);
          W->col(i) = c * ci - s * cj;
          W->col(j) = s * ci + c * cj;
        }
      }
    }
    if (!rotated) break;
  }
  out.sigma.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) out.sigma(i) = out.left.col(i).norm();
  return out;
}

}  // namespace

bool AllFinite(const Matrix& M) { return M.allFinite(); }

Matrix Symmetrize(const Matrix& M) {
  Matrix out = 0.5 * (M + M.transpose());
  return out;
}

RankDecomposition RankDecompose(const Matrix& M, RankTolerance tol) {
  if (!M.allFinite()) {
    throw std::invalid_argument("RankDecompose: non-finite input");
  }
  const Eigen::Index rows = M.rows();
  const Eigen::Index cols = M.cols();
  RankDecomposition out;
  if (rows == 0 || cols == 0) {
    out.range_basis = Matrix(rows, 0);
    out.left_null_basis = Matrix::Identity(rows, rows);
    out.null_basis = Matrix::Identity(cols, cols);
    out.corange_basis = Matrix(cols, 0);
    out.singular_values = Vector(0);
    return out;
  }
  // Work on the tall orientation; a wide M is handled through its transpose.
  const bool wide = rows < cols;
  const Matrix work = wide ? Matrix(M.transpose()) : M;
  JacobiSvd svd = OneSidedJacobi(work);
  std::vector<Eigen::Index> order(svd.sigma.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return svd.sigma(a) > svd.sigma(b);
  });
  const Eigen::Index k = svd.sigma.size();
  out.singular_values.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    out.singular_values(i) = svd.sigma(order[i]);
  }
  const double smax = std::max(out.singular_values(0), tol.scale);
  out.threshold =
      tol.rtol * smax * static_cast<double>(std::max(rows, cols));
  int rank = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double s = out.singular_values(i);
    if (s > out.threshold && s > 0.0) ++rank;
    if (out.threshold > 0.0 && s > out.threshold / 10.0 &&
        s < out.threshold * 10.0) {
      out.marginal = true;
    }
  }
  out.rank = rank;

  // Columns of the tall factor: normalized rotated columns span the range of
  // `work`; accumulated rotations give its row space and kernel.
  Matrix u(work.rows(), rank);
  Matrix v_range(work.cols(), rank);
  Matrix v_null(work.cols(), work.cols() - rank);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::Index src = order[i];
    if (i < rank) {
      u.col(i) = svd.left.col(src) / svd.sigma(src);
      v_range.col(i) = svd.right.col(src);
    } else {
      v_null.col(i - rank) = svd.right.col(src);
    }
  }
  // Re-orthonormalize u; the rotated columns are orthogonal only to the
  // Jacobi stopping tolerance.
  if (rank > 0) {
    Eigen::HouseholderQR<Matrix> qr(u);
    Matrix q = qr.householderQ() * Matrix::Identity(u.rows(), rank);
    for (int i = 0; i < rank; ++i) {
      if (q.col(i).dot(u.col(i)) < 0.0) q.col(i) = -q.col(i);
    }
    u = q;
  }
  const Matrix u_perp = Complement(u, work.rows());
  if (!wide) {
    out.range_basis = u;
    out.left_null_basis = u_perp;
    out.corange_basis = v_range;
    out.null_basis = v_null;
  } else {
    out.range_basis = v_range;
    out.left_null_basis = v_null;
    out.corange_basis = u;
    out.null_basis = u_perp;
  }
  return out;
}

int NumericalRank(const Matrix& M, RankTolerance tol) {
  return RankDecompose(M, tol).rank;
}

Matrix Orth(const Matrix& M, RankTolerance tol) {
  return RankDecompose(M, tol).range_basis;
}

Matrix NullSpace(const Matrix& M, RankTolerance tol) {
  return RankDecompose(M, tol).null_basis;
}

double ConditionNumber(const Matrix& M) {
  if (M.rows() == 0 && M.cols() == 0) return 1.0;
  const Vector s = RankDecompose(M).singular_values;
  if (s.size() == 0 || s(s.size() - 1) == 0.0 || M.rows() != M.cols()) {
    return M.rows() == M.cols() && s.size() > 0 && s(s.size() - 1) > 0.0
               ? s(0) / s(s.size() - 1)
               : std::numeric_limits<double>::infinity();
  }
  return s(0) / s(s.size() - 1);
}

Matrix BlockDiag(const std::vector<Matrix>& blocks) {
  Eigen::Index rows = 0, cols = 0;
  for (const auto& b : blocks) {
    rows += b.rows();
    cols += b.cols();
  }
  Matrix out = Matrix::Zero(rows, cols);
  Eigen::Index r = 0, c = 0;
  for (const auto& b : blocks) {
    out.block(r, c, b.rows(), b.cols()) = b;
    r += b.rows();
    c += b.cols();
  }
  return out;
}

Matrix Expm(const Matrix& M) {
  if (M.rows() != M.cols()) {
    throw DimensionError("Expm: matrix must be square");
  }
  const Eigen::Index n = M.rows();
  if (n == 0) return Matrix(0, 0);
  constexpr int kOrder = 6;
  const double norm = M.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm / 0.5))));
  }
  const Matrix X = M / std::ldexp(1.0, squarings);

  // Diagonal Pade coefficients c_k = c_{k-1} (p - k + 1) / (k (2p - k + 1)).
  double c = 1.0;
  Matrix power = Matrix::Identity(n, n);
  Matrix num = Matrix::Identity(n, n);
  Matrix den = Matrix::Identity(n, n);
  for (int k = 1; k <= kOrder; ++k) {
    c *= static_cast<double>(kOrder - k + 1) /
         static_cast<double>(k * (2 * kOrder - k + 1));
    power = power * X;
    num += c * power;
    den += ((k % 2 == 0) ? c : -c) * power;
  }
  Matrix E = den.partialPivLu().solve(num);
  for (int i = 0; i < squarings; ++i) E = E * E;
  return E;
}

Matrix QuadraticIntegral(const Matrix& A, const Matrix& M, double t) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || M.rows() != n || M.cols() != n) {
    throw DimensionError("QuadraticIntegral: shape mismatch");
  }
  if (n == 0) return Matrix(0, 0);
  // The block exponential mixes exp(A t) with exp(-A^T t), so it is only
  // evaluated on a short interval; W(2s) = W(s) + exp(A s)^T W(s) exp(A s)
  // doubles back up.
  const double norm = A.cwiseAbs().rowwise().sum().maxCoeff() * std::abs(t);
  int doublings = 0;
  while (norm / std::ldexp(1.0, doublings) > 0.25 && doublings < 60) {
    ++doublings;
  }
  const double s = std::ldexp(t, -doublings);
  Matrix C = Matrix::Zero(2 * n, 2 * n);
  C.topLeftCorner(n, n) = -A.transpose() * s;
  C.topRightCorner(n, n) = M * s;
  C.bottomRightCorner(n, n) = A * s;
  const Matrix F = Expm(C);
  Matrix Phi = F.bottomRightCorner(n, n);
  Matrix W = Symmetrize(Phi.transpose() * F.topRightCorner(n, n));
  for (int k = 0; k < doublings; ++k) {
    W = Symmetrize(W + Phi.transpose() * W * Phi);
    Phi = Phi * Phi;
  }
  return W;
}

Matrix SolveLyapunov(const Matrix& A, const Matrix& W) {
  if (A.rows() != A.cols() || W.rows() != A.rows() || W.cols() != A.cols()) {
    throw DimensionError("SolveLyapunov: A and W must be square and equal size");
  }
  const Eigen::Index n = A.rows();
  if (n == 0) return Matrix(0, 0);
  const Matrix I = Matrix::Identity(n, n);
  const Matrix At = A.transpose();
  Matrix K = Matrix::Zero(n * n, n * n);
  // vec(A^T Y) = (I kron A^T) vec Y,  vec(Y A) = (A^T kron I) vec Y.
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      K.block(i * n, j * n, n, n) += I(i, j) * At;
      K.block(i * n, j * n, n, n) += At(i, j) * I;
    }
  }
  Eigen::FullPivLU<Matrix> lu(K);
  if (!lu.isInvertible() || lu.rcond() < 1e-14) {
    throw NumericalError(
        "resonant Lyapunov equation: A and -A^T share an eigenvalue");
  }
  const Vector w = Eigen::Map<const Vector>(W.data(), n * n);
  const Vector y = lu.solve(-w);
  Matrix Y = Eigen::Map<const Matrix>(y.data(), n, n);
  if ((W - W.transpose()).norm() <= 1e-12 * std::max(1.0, W.norm())) {
    Y = Symmetrize(Y);
  }
  return Y;
}

Matrix MatrixSign(const Matrix& M) {
  if (M.rows() != M.cols()) {
    throw DimensionError("MatrixSign: matrix must be square");
  }
  const Eigen::Index n = M.rows();
  if (n == 0) return Matrix(0, 0);
  Matrix Z = M;
  double prev_change = std::numeric_limits<double>::infinity();
  bool converged = false;
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::PartialPivLU<Matrix> lu(Z);
    if (lu.rcond() < 1e-14) {
      throw NumericalError("MatrixSign: imaginary-axis spectrum (near-singular iterate)");
    }
    // Determinant scaling only while far from convergence; it would spoil the
    // quadratic phase.
    double scale = 1.0;
    if (prev_change > 1e-2) {
      const double logdet = lu.matrixLU().diagonal().cwiseAbs().array().log().sum();
      scale = std::exp(-logdet / static_cast<double>(n));
    }
    Matrix next = 0.5 * (scale * Z + lu.inverse() / scale);
    if (!next.allFinite()) {
      throw NumericalError("MatrixSign: imaginary-axis spectrum (divergence)");
    }
    const double change = (next - Z).norm();
    const double ref = Z.norm();
    Z = std::move(next);
    if (change <= 1e-13 * ref) {
      converged = true;
      break;
    }
    // Stagnation at rounding level.
    if (iter > 5 && change >= prev_change && change <= 1e-8 * ref) {
      converged = true;
      break;
    }
    prev_change = change / std::max(ref, 1e-300);
  }
  const double defect = (Z * Z - Matrix::Identity(n, n)).norm();
  if (!converged || defect > 1e-8 * std::max(1.0, Z.norm() * Z.norm())) {
    throw NumericalError("MatrixSign: imaginary-axis spectrum (no convergence)");
  }
  return Z;
}

SymmetricEigen SymEigen(const Matrix& M) {
  if (M.rows() != M.cols()) {
    throw DimensionError("SymEigen: matrix must be square");
  }
  const Eigen::Index n = M.rows();
  const double scale = std::max(1.0, M.norm());
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale && n > 0) {
    throw std::invalid_argument("SymEigen: asymmetric input");
  }
  Matrix a = 0.5 * (M + M.transpose());
  Matrix v = Matrix::Identity(n, n);
  const double target = 1e-13 * std::max(a.norm(), 1e-300);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) off += 2.0 * a(i, j) * a(i, j);
    }
    if (std::sqrt(off) <= target) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = std::copysign(1.0, theta) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto x, auto y) { return a(x, x) < a(y, y); });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = a(order[i], order[i]);
    out.vectors.col(i) = v.col(order[i]);
  }
  return out;
}

Vector SymEigvals(const Matrix& M) { return SymEigen(M).values; }

Vector ProjectEllipsoid(const Vector& y, const Matrix& P, double rho) {
  if (P.rows() != P.cols() || P.rows() != y.size()) {
    throw DimensionError("ProjectEllipsoid: dimension mismatch");
  }
  if (y.size() == 0 || y.dot(P * y) <= rho) return y;
  const SymmetricEigen eig = SymEigen(P);
  const Vector w = eig.vectors.transpose() * y;
  const Vector& lam = eig.values;
  // phi(mu) = sum lam_i w_i^2 / (1 + mu lam_i)^2 is convex and decreasing;
  // the projection is z = (I + mu P)^{-1} y with phi(mu) = rho.
  auto phi = [&](double mu, double* dphi) {
    double f = 0.0, df = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double d = 1.0 + mu * lam(i);
      f += lam(i) * w(i) * w(i) / (d * d);
      df += -2.0 * lam(i) * lam(i) * w(i) * w(i) / (d * d * d);
    }
    if (dphi) *dphi = df;
    return f;
  };
  double lo = 0.0;
  double hi = w.norm() / std::sqrt(rho * std::max(lam(0), 1e-300));
  double mu = 0.0;
  for (int iter = 0; iter < 200; ++iter) {
    double df = 0.0;
    const double f = phi(mu, &df) - rho;
    if (std::abs(f) <= 1e-15 * rho) break;
    if (f > 0.0) lo = mu; else hi = mu;
    double next = (df < 0.0) ? mu - f / df : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - mu) <= 1e-16 * std::max(1.0, mu)) {
      mu = next;
      break;
    }
    mu = next;
  }
  Vector zw(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) zw(i) = w(i) / (1.0 + mu * lam(i));
  Vector z = eig.vectors * zw;
  const double q = z.dot(P * z);
  if (q > rho) z *= std::sqrt(rho / q);
  return z;
}

}  // namespace daempc
