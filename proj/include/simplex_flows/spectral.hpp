#pragma once

// Dense symmetric eigensolver (cyclic Jacobi) and the spectral utilities built
// on it: condition numbers, symmetric square roots, SPD solves and the
// closed-form discrete Lyapunov solve P = M P M + I with M = I - alpha Q.

#include "simplex_flows/sym_matrix.hpp"
#include "simplex_flows/types.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace sflow {

template <typename Scalar = double> struct EigenDecomposition {
  Vec<Scalar> values;  // ascending
  Mat<Scalar> vectors; // orthonormal columns

  Mat<Scalar> reconstruct() const {
    return vectors * values.asDiagonal() * vectors.transpose();
  }
};

struct JacobiOptions {
  double off_tolerance = 1e-12; // relative to the Frobenius norm of the input
  int max_sweeps = 100;
};

namespace detail {

template <typename Scalar> Scalar off_diagonal_norm(const Mat<Scalar> &a) {
  Scalar s(0);
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = 0; i < a.rows(); ++i)
      if (i != j)
        s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

} // namespace detail

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
/// Eigenvalues ascending; each eigenvector's largest-magnitude component is
/// positive (first such component on ties). Deterministic for identical input.
template <typename Scalar>
EigenDecomposition<Scalar> eigh(const SymMatrix<Scalar> &m, const JacobiOptions &opts = {}) {
  using std::abs;
  using std::sqrt;
  const Index n = m.dim();
  Mat<Scalar> a = m.matrix();
  Mat<Scalar> v = Mat<Scalar>::Identity(n, n);

  const Scalar scale = a.norm();
  const Scalar target = Scalar(opts.off_tolerance) * scale;
  int sweep = 0;
  while (scale > Scalar(0) && detail::off_diagonal_norm(a) > target) {
    if (++sweep > opts.max_sweeps)
      break;
    for (Index p = 0; p < n - 1; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const Scalar apq = a(p, q);
        if (apq == Scalar(0))
          continue;
        // Rotation angle from the symmetric Schur decomposition of the 2x2 block.
        const Scalar tau = (a(q, q) - a(p, p)) / (Scalar(2) * apq);
        const Scalar t = (tau >= Scalar(0) ? Scalar(1) : Scalar(-1)) /
                         (abs(tau) + sqrt(Scalar(1) + tau * tau));
        const Scalar c = Scalar(1) / sqrt(Scalar(1) + t * t);
        const Scalar s = t * c;
        for (Index k = 0; k < n; ++k) {
          const Scalar akp = a(k, p);
          const Scalar akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Index k = 0; k < n; ++k) {
          const Scalar apk = a(p, k);
          const Scalar aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Index k = 0; k < n; ++k) {
          const Scalar vkp = v(k, p);
          const Scalar vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Index(0));
  std::stable_sort(order.begin(), order.end(),
                   [&](Index i, Index j) { return a(i, i) < a(j, j); });

  EigenDecomposition<Scalar> out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Index k = 0; k < n; ++k) {
    const Index src = order[static_cast<size_t>(k)];
    out.values[k] = a(src, src);
    Vec<Scalar> col = v.col(src);
    Index arg = 0;
    for (Index i = 1; i < n; ++i)
      if (abs(col[i]) > abs(col[arg]))
        arg = i;
    if (col[arg] < Scalar(0))
      col = -col;
    out.vectors.col(k) = col;
  }
  return out;
}

namespace detail {

template <typename Scalar>
void require_positive_definite(const EigenDecomposition<Scalar> &ed, const char *where) {
  if (!(ed.values[0] > Scalar(0)))
    throw NotPositiveDefinite(std::string(where) + ": smallest eigenvalue " +
                              std::to_string(static_cast<double>(ed.values[0])) +
                              " is not positive");
}

template <typename Scalar>
SymMatrix<Scalar> from_spectrum(const Mat<Scalar> &u, const Vec<Scalar> &diag) {
  Mat<Scalar> r = u * diag.asDiagonal() * u.transpose();
  return SymMatrix<Scalar>(Scalar(0.5) * (r + r.transpose()));
}

} // namespace detail

/// cond(M) = lambda_max / lambda_min for positive definite M.
template <typename Scalar> Scalar cond(const SymMatrix<Scalar> &m) {
  const auto ed = eigh(m);
  detail::require_positive_definite(ed, "cond");
  return ed.values[ed.values.size() - 1] / ed.values[0];
}

template <typename Scalar> SymMatrix<Scalar> sym_sqrt(const SymMatrix<Scalar> &m) {
  const auto ed = eigh(m);
  detail::require_positive_definite(ed, "sym_sqrt");
  return detail::from_spectrum<Scalar>(ed.vectors, ed.values.cwiseSqrt());
}

template <typename Scalar> SymMatrix<Scalar> sym_inverse(const SymMatrix<Scalar> &m) {
  const auto ed = eigh(m);
  detail::require_positive_definite(ed, "sym_inverse");
  return detail::from_spectrum<Scalar>(ed.vectors, ed.values.cwiseInverse());
}

/// Solve M x = b for symmetric positive definite M (Cholesky).
template <typename Scalar>
Vec<Scalar> solve_spd(const SymMatrix<Scalar> &m, const Vec<Scalar> &b) {
  require_same_dim("solve_spd", m.dim(), b.size());
  Eigen::LLT<Mat<Scalar>> llt(m.matrix());
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("solve_spd: Cholesky factorization failed");
  return llt.solve(b);
}

/// Induced 2-norm of a general (possibly non-symmetric) matrix.
template <typename Scalar> Scalar spectral_norm(const Mat<Scalar> &a) {
  const auto ed = eigh(SymMatrix<Scalar>(a.transpose() * a));
  return std::sqrt(std::max(Scalar(0), ed.values[ed.values.size() - 1]));
}

/// Ratio of the second-smallest to the smallest entry of eta: a lower bound on
/// cond of the Hessian of the loss at its optimum.
template <typename Scalar> Scalar kappa_lower_bound(const Vec<Scalar> &eta) {
  if (eta.size() < 2)
    throw DomainError("kappa_lower_bound: need n >= 2");
  Vec<Scalar> sorted = eta;
  std::sort(sorted.data(), sorted.data() + sorted.size());
  return sorted[1] / sorted[0];
}

/// Stationary solution of P = (I - alpha Q) P (I - alpha Q) + I, solved in
/// the eigenbasis of Q: P = U diag(1 / (1 - mu_i^2)) U^T, mu_i = 1 - alpha lambda_i.
template <typename Scalar> SymMatrix<Scalar> solve_lyapunov(const SymMatrix<Scalar> &q, Scalar alpha) {
  const auto ed = eigh(q);
  Vec<Scalar> diag(ed.values.size());
  for (Index i = 0; i < diag.size(); ++i) {
    const Scalar mu = Scalar(1) - alpha * ed.values[i];
    if (!(std::abs(mu) < Scalar(1)))
      throw NoStationarySolution("solve_lyapunov: |1 - alpha*lambda| = " +
                                 std::to_string(static_cast<double>(std::abs(mu))) + " >= 1");
    diag[i] = Scalar(1) / (Scalar(1) - mu * mu);
  }
  return detail::from_spectrum<Scalar>(ed.vectors, diag);
}

} // namespace sflow
