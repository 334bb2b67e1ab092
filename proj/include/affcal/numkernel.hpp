#pragma once

// Small dense symmetric eigensolver and SPD solve used by the estimators.
//
// Storage follows Eigen's default column-major layout. Everything here is a
// pure function of its arguments.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "affcal/errors.hpp"

namespace affcal {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

/// Eigenpairs of a symmetric matrix. values are descending and column i of
/// vectors is the unit eigenvector paired with values[i].
template <typename Scalar>
struct EigenResult {
  Vector<Scalar> values;
  Matrix<Scalar> vectors;
  int sweeps = 0;
};

namespace numkernel {

inline constexpr int kMaxJacobiSweeps = 100;
inline constexpr double kJacobiTolerance = 1e-12;
inline constexpr double kSymmetryTolerance = 1e-9;
inline constexpr double kPivotTolerance = 1e-12;

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

template <typename Derived>
void require_square_finite(const Eigen::MatrixBase<Derived>& m, const char* who) {
  if (m.rows() < 1 || m.rows() != m.cols()) {
    std::ostringstream os;
    os << who << ": expected a non-empty square matrix, got " << m.rows() << "x" << m.cols();
    throw ContractError(os.str());
  }
  if (!all_finite(m)) throw ContractError(std::string(who) + ": matrix has non-finite entries");
}

// Flip so the largest-magnitude entry (first one on ties) is positive.
template <typename Scalar>
void canonicalize_sign(Eigen::Ref<Vector<Scalar>> v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (std::abs(v(i)) > std::abs(v(best))) best = i;
  }
  if (v(best) < Scalar(0)) v = -v;
}

}  // namespace numkernel

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Sweeps until the off-diagonal Frobenius norm drops to 1e-12 * ||S||_F,
/// at most 100 sweeps. Eigenvalues come back descending (stable on ties);
/// each eigenvector has its largest-magnitude entry positive.
template <typename Derived>
EigenResult<typename Derived::Scalar> sym_eig(const Eigen::MatrixBase<Derived>& s) {
  using Scalar = typename Derived::Scalar;
  numkernel::require_square_finite(s, "sym_eig");
  const Index dim = s.rows();

  const Scalar scale = std::max(Scalar(1), s.cwiseAbs().maxCoeff());
  const Scalar asym = (s - s.transpose()).cwiseAbs().maxCoeff();
  if (asym > Scalar(numkernel::kSymmetryTolerance) * scale) {
    std::ostringstream os;
    os << "sym_eig: matrix is not symmetric (max |S - S^T| = " << asym << ")";
    throw ContractError(os.str());
  }

  Matrix<Scalar> a = (s + s.transpose()) / Scalar(2);
  Matrix<Scalar> v = Matrix<Scalar>::Identity(dim, dim);
  const Scalar tol = Scalar(numkernel::kJacobiTolerance) * a.norm();

  auto off_diagonal = [&a, dim]() {
    Scalar sum = 0;
    for (Index j = 0; j < dim; ++j)
      for (Index i = 0; i < dim; ++i)
        if (i != j) sum += a(i, j) * a(i, j);
    return std::sqrt(sum);
  };

  int sweep = 0;
  Scalar off = off_diagonal();
  while (off > tol) {
    if (sweep == numkernel::kMaxJacobiSweeps) {
      std::ostringstream os;
      os << "sym_eig: no convergence after " << sweep << " sweeps, off-diagonal norm " << off;
      throw ConvergenceError(os.str(), static_cast<double>(off));
    }
    for (Index p = 0; p + 1 < dim; ++p) {
      for (Index q = p + 1; q < dim; ++q) {
        const Scalar apq = a(p, q);
        if (apq == Scalar(0)) continue;
        const Scalar theta = (a(q, q) - a(p, p)) / (Scalar(2) * apq);
        Scalar t;
        if (std::abs(theta) > Scalar(1e150)) {
          t = Scalar(1) / (Scalar(2) * theta);
        } else {
          t = Scalar(1) / (std::abs(theta) + std::sqrt(theta * theta + Scalar(1)));
          if (theta < Scalar(0)) t = -t;
        }
        const Scalar c = Scalar(1) / std::sqrt(t * t + Scalar(1));
        const Scalar sn = t * c;

        for (Index k = 0; k < dim; ++k) {
          const Scalar akp = a(k, p);
          const Scalar akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (Index k = 0; k < dim; ++k) {
          const Scalar apk = a(p, k);
          const Scalar aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        a(p, q) = Scalar(0);
        a(q, p) = Scalar(0);
        for (Index k = 0; k < dim; ++k) {
          const Scalar vkp = v(k, p);
          const Scalar vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
    ++sweep;
    off = off_diagonal();
  }

  std::vector<Index> order(static_cast<std::size_t>(dim));
  std::iota(order.begin(), order.end(), Index(0));
  std::stable_sort(order.begin(), order.end(),
                   [&a](Index l, Index r) { return a(l, l) > a(r, r); });

  EigenResult<Scalar> out;
  out.values.resize(dim);
  out.vectors.resize(dim, dim);
  out.sweeps = sweep;
  for (Index i = 0; i < dim; ++i) {
    const Index src = order[static_cast<std::size_t>(i)];
    out.values(i) = a(src, src);
    Vector<Scalar> col = v.col(src);
    col.normalize();
    numkernel::canonicalize_sign<Scalar>(col);
    out.vectors.col(i) = col;
  }
  return out;
}

/// Eigenvectors of the k largest eigenvalues, as columns in descending order.
template <typename Derived>
Matrix<typename Derived::Scalar> top_k_eigvecs(const Eigen::MatrixBase<Derived>& s, Index k) {
  if (s.rows() >= 1 && (k < 1 || k > s.rows())) {
    std::ostringstream os;
    os << "top_k_eigvecs: k = " << k << " outside [1, " << s.rows() << "]";
    throw ArgumentError(os.str());
  }
  auto eig = sym_eig(s);
  return eig.vectors.leftCols(k);
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
/// Only the lower triangle of g is read.
template <typename Derived>
Matrix<typename Derived::Scalar> cholesky_lower(const Eigen::MatrixBase<Derived>& g) {
  using Scalar = typename Derived::Scalar;
  numkernel::require_square_finite(g, "cholesky");
  const Index dim = g.rows();
  const Scalar trace = g.trace();
  const Scalar tol = Scalar(numkernel::kPivotTolerance) * trace / Scalar(dim);

  Matrix<Scalar> l = Matrix<Scalar>::Zero(dim, dim);
  for (Index j = 0; j < dim; ++j) {
    Scalar d = g(j, j);
    for (Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > tol) || !(trace > Scalar(0))) {
      std::ostringstream os;
      os << "matrix is singular or indefinite: Cholesky pivot " << j << " is " << d
         << " (tolerance " << tol << ")";
      throw SingularMatrixError(os.str(), static_cast<std::size_t>(j));
    }
    const Scalar ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Index i = j + 1; i < dim; ++i) {
      Scalar sum = g(i, j);
      for (Index k = 0; k < j; ++k) sum -= l(i, k) * l(j, k);
      l(i, j) = sum / ljj;
    }
  }
  return l;
}

/// Solves G Z = rhs for symmetric positive-definite G via Cholesky.
/// Throws SingularMatrixError when a pivot falls below 1e-12 * trace(G) / dim.
template <typename DerivedG, typename DerivedR>
Matrix<typename DerivedG::Scalar> solve_spd(const Eigen::MatrixBase<DerivedG>& g,
                                            const Eigen::MatrixBase<DerivedR>& rhs) {
  using Scalar = typename DerivedG::Scalar;
  if (g.rows() != rhs.rows()) {
    std::ostringstream os;
    os << "solve_spd: G is " << g.rows() << "x" << g.cols() << " but rhs has " << rhs.rows()
       << " rows";
    throw ArgumentError(os.str());
  }
  if (!numkernel::all_finite(rhs)) throw ContractError("solve_spd: rhs has non-finite entries");
  const Matrix<Scalar> l = cholesky_lower(g);
  const Index dim = l.rows();

  Matrix<Scalar> z = rhs;
  for (Index c = 0; c < z.cols(); ++c) {
    for (Index i = 0; i < dim; ++i) {
      Scalar sum = z(i, c);
      for (Index k = 0; k < i; ++k) sum -= l(i, k) * z(k, c);
      z(i, c) = sum / l(i, i);
    }
    for (Index i = dim - 1; i >= 0; --i) {
      Scalar sum = z(i, c);
      for (Index k = i + 1; k < dim; ++k) sum -= l(k, i) * z(k, c);
      z(i, c) = sum / l(i, i);
    }
  }
  return z;
}

/// Spectral condition number of a symmetric matrix, +inf when the smallest
/// eigenvalue is not positive.
template <typename Derived>
typename Derived::Scalar spd_condition(const Eigen::MatrixBase<Derived>& g) {
  using Scalar = typename Derived::Scalar;
  const auto eig = sym_eig(g);
  const Scalar lo = eig.values(eig.values.size() - 1);
  if (!(lo > Scalar(0))) return std::numeric_limits<Scalar>::infinity();
  return eig.values(0) / lo;
}

}  // namespace affcal
