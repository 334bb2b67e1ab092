#pragma once

// Affine transform estimation between two measurement spaces.
//
// Samples are stored as columns: a q x n DataMatrix holds n samples of
// dimension q. The estimators lift both sides to p = q + 1 rows by appending
// a row of ones, so the affine map T(x) = A x + b becomes the linear map
//
//     B = [ A  b ]
//         [ 0  1 ]
//
// and fit B against the lifted data.

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "affcal/errors.hpp"
#include "affcal/numkernel.hpp"

namespace affcal {

enum class SampleCheck {
  Estimation,  // enforce n >= 2(q+1)
  ApplyOnly,
};

template <typename Scalar>
class DataMatrix {
 public:
  explicit DataMatrix(Matrix<Scalar> values, SampleCheck check = SampleCheck::Estimation)
      : values_(std::move(values)) {
    if (values_.rows() < 1 || values_.cols() < 1)
      throw ArgumentError("DataMatrix: needs at least one feature and one sample");
    if (!values_.allFinite()) throw ContractError("DataMatrix: non-finite entries");
    if (check == SampleCheck::Estimation && values_.cols() < 2 * (values_.rows() + 1)) {
      std::ostringstream os;
      os << "DataMatrix: " << values_.cols() << " samples of dimension " << values_.rows()
         << " is below the estimation minimum n >= 2(q+1) = " << 2 * (values_.rows() + 1);
      throw ArgumentError(os.str());
    }
  }

  Index dim() const { return values_.rows(); }
  Index samples() const { return values_.cols(); }
  const Matrix<Scalar>& values() const { return values_; }

 private:
  Matrix<Scalar> values_;
};

/// Lifted data: p = q + 1 rows, the last row all exactly one.
template <typename Scalar>
class AugmentedData {
 public:
  explicit AugmentedData(Matrix<Scalar> values) : values_(std::move(values)) {
    if (values_.rows() < 2 || values_.cols() < 1)
      throw ArgumentError("AugmentedData: needs at least 2 rows and 1 sample");
    if ((values_.row(values_.rows() - 1).array() != Scalar(1)).any())
      throw ContractError("AugmentedData: augmentation row must be all ones");
    if (!values_.allFinite()) throw ContractError("AugmentedData: non-finite entries");
  }

  Index p() const { return values_.rows(); }
  Index samples() const { return values_.cols(); }
  const Matrix<Scalar>& values() const { return values_; }

 private:
  Matrix<Scalar> values_;
};

template <typename Scalar>
class AffineTransform {
 public:
  AffineTransform(Matrix<Scalar> a, Vector<Scalar> b) : a_(std::move(a)), b_(std::move(b)) {
    if (a_.rows() < 1 || a_.rows() != a_.cols() || b_.size() != a_.rows()) {
      std::ostringstream os;
      os << "AffineTransform: A is " << a_.rows() << "x" << a_.cols() << ", b has " << b_.size()
         << " entries";
      throw ArgumentError(os.str());
    }
    if (!a_.allFinite() || !b_.allFinite())
      throw ContractError("AffineTransform: non-finite entries");
  }

  static AffineTransform identity(Index q) {
    return AffineTransform(Matrix<Scalar>::Identity(q, q), Vector<Scalar>::Zero(q));
  }

  Index dim() const { return a_.rows(); }
  const Matrix<Scalar>& a() const { return a_; }
  const Vector<Scalar>& b() const { return b_; }

 private:
  Matrix<Scalar> a_;
  Vector<Scalar> b_;
};

/// p x p matrix [A b; 0 1]. The last row is checked to be exactly (0,...,0,1).
template <typename Scalar>
class AugmentedTransform {
 public:
  explicit AugmentedTransform(Matrix<Scalar> bmat) : bmat_(std::move(bmat)) {
    const Index p = bmat_.rows();
    if (p < 2 || bmat_.cols() != p) throw ArgumentError("AugmentedTransform: must be square, p >= 2");
    Vector<Scalar> expected = Vector<Scalar>::Zero(p);
    expected(p - 1) = Scalar(1);
    if (bmat_.row(p - 1).transpose() != expected)
      throw ContractError("AugmentedTransform: last row must be (0,...,0,1)");
    if (!bmat_.allFinite()) throw ContractError("AugmentedTransform: non-finite entries");
  }

  static AugmentedTransform from_affine(const AffineTransform<Scalar>& t) {
    const Index q = t.dim();
    Matrix<Scalar> m = Matrix<Scalar>::Zero(q + 1, q + 1);
    m.topLeftCorner(q, q) = t.a();
    m.topRightCorner(q, 1) = t.b();
    m(q, q) = Scalar(1);
    return AugmentedTransform(std::move(m));
  }

  Index p() const { return bmat_.rows(); }
  const Matrix<Scalar>& bmat() const { return bmat_; }

 private:
  Matrix<Scalar> bmat_;
};

/// The four estimator variants compared throughout.
enum class Estimator {
  GleserWatson,          // eigen-projected origins, augmentation row left as projected
  GleserWatsonDenoised,  // same, augmentation row reset to exact ones
  LeastSquares,          // B = Y X^T (X X^T)^-1, origins = X
  Hybrid,                // least-squares B, eigen-projected origins
};

inline constexpr Estimator kAllEstimators[] = {Estimator::GleserWatson,
                                               Estimator::GleserWatsonDenoised,
                                               Estimator::LeastSquares, Estimator::Hybrid};

inline std::string_view estimator_name(Estimator e) {
  switch (e) {
    case Estimator::GleserWatson: return "gw";
    case Estimator::GleserWatsonDenoised: return "gw-denoised";
    case Estimator::LeastSquares: return "ls";
    case Estimator::Hybrid: return "hybrid";
  }
  return "unknown";
}

/// Accepts the canonical names plus the aliases alg1, alg2, alg3.
inline std::optional<Estimator> parse_estimator(std::string_view name) {
  if (name == "gw") return Estimator::GleserWatson;
  if (name == "gw-denoised" || name == "alg1") return Estimator::GleserWatsonDenoised;
  if (name == "ls" || name == "alg2") return Estimator::LeastSquares;
  if (name == "hybrid" || name == "alg3") return Estimator::Hybrid;
  return std::nullopt;
}

struct FitDiagnostics {
  // max |B(p, :) - (0,...,0,1)| of the freely estimated B before slicing.
  double last_row_deviation = 0.0;
  // Spectral condition number of the Gram matrix inverted for B.
  double gram_condition = 0.0;
  std::vector<std::string> warnings;
};

template <typename Scalar>
struct CalibrationResult {
  AffineTransform<Scalar> transform;
  DataMatrix<Scalar> theta_e;
  Estimator method;
  Index denoise_rank;  // 0 when no eigen projection was used
  FitDiagnostics diagnostics;
};

/// How the leading eigenvectors of the n x n Gram matrix X^T X + Y^T Y are
/// obtained. Direct decomposes the Gram matrix itself; Reduced works on the
/// 2p x 2p matrix Z Z^T with Z = [X; Y], which has the same nonzero spectrum.
enum class ProjectionPath { Automatic, Direct, Reduced };

inline constexpr Index kDirectGramLimit = 512;
inline constexpr double kLastRowWarning = 1e-3;
inline constexpr double kReducedEigenFloor = 1e-10;

struct FitOptions {
  std::optional<Index> denoise_rank;  // hybrid only; defaults to p
  ProjectionPath path = ProjectionPath::Automatic;
};

// ---------------------------------------------------------------------------
// Lifting

template <typename Scalar>
AugmentedData<Scalar> augment(const DataMatrix<Scalar>& x) {
  Matrix<Scalar> out(x.dim() + 1, x.samples());
  out.topRows(x.dim()) = x.values();
  out.row(x.dim()).setOnes();
  return AugmentedData<Scalar>(std::move(out));
}

template <typename Scalar>
DataMatrix<Scalar> deaugment(const AugmentedData<Scalar>& x) {
  return DataMatrix<Scalar>(x.values().topRows(x.p() - 1), SampleCheck::ApplyOnly);
}

template <typename Scalar>
AffineTransform<Scalar> deaugment_transform(const AugmentedTransform<Scalar>& t) {
  const Index q = t.p() - 1;
  return AffineTransform<Scalar>(t.bmat().topLeftCorner(q, q), t.bmat().topRightCorner(q, 1));
}

// ---------------------------------------------------------------------------
// Likelihood objective and its gradients
//
// With Gaussian noise of variance sigma^2 on both sides the joint likelihood is
// (2 pi sigma^2)^(-np) exp(-f / (2 sigma^2)), so maximizing it over (Theta, B)
// is minimizing
//
//     f = tr[(X - Theta)(X - Theta)^T] + tr[(Y - B Theta)(Y - B Theta)^T].
//
// These overloads take plain matrices so finite-difference checks can perturb
// any entry, including the augmentation row.

namespace detail {
template <typename DX, typename DY, typename DT, typename DB>
void check_objective_shapes(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                            const Eigen::MatrixBase<DT>& theta, const Eigen::MatrixBase<DB>& bmat) {
  const bool ok = x.rows() == theta.rows() && x.cols() == theta.cols() &&
                  y.rows() == x.rows() && y.cols() == x.cols() && bmat.rows() == x.rows() &&
                  bmat.cols() == x.rows();
  if (!ok) {
    std::ostringstream os;
    os << "objective: shape mismatch X " << x.rows() << "x" << x.cols() << ", Y " << y.rows()
       << "x" << y.cols() << ", Theta " << theta.rows() << "x" << theta.cols() << ", B "
       << bmat.rows() << "x" << bmat.cols();
    throw ArgumentError(os.str());
  }
}
}  // namespace detail

template <typename DX, typename DY, typename DT, typename DB>
typename DX::Scalar objective_f(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                                const Eigen::MatrixBase<DT>& theta,
                                const Eigen::MatrixBase<DB>& bmat) {
  detail::check_objective_shapes(x, y, theta, bmat);
  return (x - theta).squaredNorm() + (y - bmat * theta).squaredNorm();
}

template <typename Scalar>
Scalar objective_f(const AugmentedData<Scalar>& x, const AugmentedData<Scalar>& y,
                   const AugmentedData<Scalar>& theta, const AugmentedTransform<Scalar>& bmat) {
  return objective_f(x.values(), y.values(), theta.values(), bmat.bmat());
}

/// d f / d Theta = -2 (X - Theta) - 2 B^T (Y - B Theta)
template <typename DX, typename DY, typename DT, typename DB>
Matrix<typename DX::Scalar> grad_f_theta(const Eigen::MatrixBase<DX>& x,
                                         const Eigen::MatrixBase<DY>& y,
                                         const Eigen::MatrixBase<DT>& theta,
                                         const Eigen::MatrixBase<DB>& bmat) {
  using Scalar = typename DX::Scalar;
  detail::check_objective_shapes(x, y, theta, bmat);
  return Scalar(-2) * (x - theta) - Scalar(2) * bmat.transpose() * (y - bmat * theta);
}

/// d f / d B = -2 (Y - B Theta) Theta^T
template <typename DX, typename DY, typename DT, typename DB>
Matrix<typename DX::Scalar> grad_f_bmat(const Eigen::MatrixBase<DX>& x,
                                        const Eigen::MatrixBase<DY>& y,
                                        const Eigen::MatrixBase<DT>& theta,
                                        const Eigen::MatrixBase<DB>& bmat) {
  using Scalar = typename DX::Scalar;
  detail::check_objective_shapes(x, y, theta, bmat);
  return Scalar(-2) * (y - bmat * theta) * theta.transpose();
}

// ---------------------------------------------------------------------------
// Building blocks of the estimators

/// Rows of x projected onto span(basis): x * basis * basis^T.
/// basis has orthonormal columns in sample space (n x k).
template <typename DX, typename DU>
Matrix<typename DX::Scalar> project_rows(const Eigen::MatrixBase<DX>& x,
                                         const Eigen::MatrixBase<DU>& basis) {
  if (basis.rows() != x.cols()) throw ArgumentError("project_rows: basis/sample count mismatch");
  return (x * basis) * basis.transpose();
}

/// Theta = (U U^T X^T)^T where U holds the `rank` leading eigenvectors of
/// X^T X + Y^T Y. Inputs are the lifted p x n matrices.
template <typename Scalar>
Matrix<Scalar> project_leading_subspace(const Matrix<Scalar>& x, const Matrix<Scalar>& y,
                                        Index rank,
                                        ProjectionPath path = ProjectionPath::Automatic) {
  const Index n = x.cols();
  if (y.rows() != x.rows() || y.cols() != n)
    throw ArgumentError("project_leading_subspace: X and Y shapes differ");
  if (rank < 1 || rank > n) {
    std::ostringstream os;
    os << "project_leading_subspace: rank " << rank << " outside [1, " << n << "]";
    throw ArgumentError(os.str());
  }
  if (path == ProjectionPath::Automatic)
    path = n <= kDirectGramLimit ? ProjectionPath::Direct : ProjectionPath::Reduced;

  if (path == ProjectionPath::Direct) {
    const Matrix<Scalar> gram = x.transpose() * x + y.transpose() * y;
    const Matrix<Scalar> u = top_k_eigvecs(gram, rank);
    return project_rows(x, u);
  }

  // Z^T Z = X^T X + Y^T Y. For each nonzero eigenpair (lambda, w) of Z Z^T,
  // u = Z^T w / sqrt(lambda) is the matching unit eigenvector of the Gram
  // matrix, so U U^T = Z^T W Lambda^-1 W^T Z. Eigenvectors of the Gram matrix
  // with zero eigenvalue are orthogonal to every row of X and drop out.
  Matrix<Scalar> z(2 * x.rows(), n);
  z << x, y;
  const auto eig = sym_eig(Matrix<Scalar>(z * z.transpose()));
  const Scalar floor = Scalar(kReducedEigenFloor) * std::max(eig.values(0), Scalar(0));
  Index kept = 0;
  const Index limit = std::min<Index>(rank, eig.values.size());
  while (kept < limit && eig.values(kept) > floor) ++kept;
  if (kept == 0) return Matrix<Scalar>::Zero(x.rows(), n);

  const Matrix<Scalar> w = eig.vectors.leftCols(kept);
  const Vector<Scalar> inv = eig.values.head(kept).cwiseInverse();
  const Matrix<Scalar> xz = x * z.transpose();
  return (xz * w * inv.asDiagonal() * w.transpose()) * z;
}

/// Free p x p estimate B = Y Theta^T (Theta Theta^T)^-1, solved via Cholesky.
template <typename Scalar>
Matrix<Scalar> regress_bmat(const Matrix<Scalar>& y, const Matrix<Scalar>& theta,
                            FitDiagnostics& diag) {
  const Matrix<Scalar> gram = theta * theta.transpose();
  Matrix<Scalar> bt;
  try {
    bt = solve_spd(gram, Matrix<Scalar>(theta * y.transpose()));
  } catch (const SingularMatrixError& e) {
    throw SingularMatrixError(std::string(e.what()) +
                                  "; the sample Gram matrix is singular, supply more samples or "
                                  "samples with a richer spread",
                              e.pivot_index());
  }
  diag.gram_condition = static_cast<double>(spd_condition(gram));
  return bt.transpose();
}

/// Slices A and b out of a freely estimated B, recording how far its last
/// row strayed from (0,...,0,1).
template <typename Scalar>
AffineTransform<Scalar> extract_transform(const Matrix<Scalar>& bmat, FitDiagnostics& diag) {
  const Index p = bmat.rows();
  const Index q = p - 1;
  Vector<Scalar> expected = Vector<Scalar>::Zero(p);
  expected(q) = Scalar(1);
  diag.last_row_deviation =
      static_cast<double>((bmat.row(q).transpose() - expected).cwiseAbs().maxCoeff());
  if (diag.last_row_deviation > kLastRowWarning) {
    std::ostringstream os;
    os << "augmentation row of B deviates by " << diag.last_row_deviation
       << " from (0,...,0,1); the affine model may not fit this data";
    diag.warnings.push_back(os.str());
  }
  return AffineTransform<Scalar>(bmat.topLeftCorner(q, q), bmat.topRightCorner(q, 1));
}

namespace detail {
template <typename Scalar>
void check_pair(const DataMatrix<Scalar>& x, const DataMatrix<Scalar>& y, const char* who) {
  if (x.dim() != y.dim() || x.samples() != y.samples()) {
    std::ostringstream os;
    os << who << ": X is " << x.dim() << "x" << x.samples() << " but Y is " << y.dim() << "x"
       << y.samples();
    throw ArgumentError(os.str());
  }
  const Index p = x.dim() + 1;
  if (x.samples() < 2 * p) {
    std::ostringstream os;
    os << who << ": " << x.samples() << " samples is below the minimum n >= 2p = " << 2 * p;
    throw ArgumentError(os.str());
  }
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Estimators

/// Gleser-Watson estimate on lifted data.
///
/// Origins are the projection of X onto the p leading eigenvectors of
/// X^T X + Y^T Y; B is then regressed on those origins. With denoise the
/// projected augmentation row is reset to exact ones before regressing.
template <typename Scalar>
CalibrationResult<Scalar> fit_gleser_watson(const DataMatrix<Scalar>& x,
                                            const DataMatrix<Scalar>& y, bool denoise = true,
                                            ProjectionPath path = ProjectionPath::Automatic) {
  detail::check_pair(x, y, "fit_gleser_watson");
  const Index q = x.dim();
  const Index p = q + 1;
  const Matrix<Scalar> xa = augment(x).values();
  const Matrix<Scalar> ya = augment(y).values();

  Matrix<Scalar> theta = project_leading_subspace(xa, ya, p, path);
  if (denoise) theta.row(q).setOnes();

  FitDiagnostics diag;
  const Matrix<Scalar> bmat = regress_bmat(ya, theta, diag);
  auto transform = extract_transform(bmat, diag);
  return CalibrationResult<Scalar>{
      std::move(transform), DataMatrix<Scalar>(theta.topRows(q), SampleCheck::ApplyOnly),
      denoise ? Estimator::GleserWatsonDenoised : Estimator::GleserWatson, p, std::move(diag)};
}

/// Least squares B = Y X^T (X X^T)^-1 on lifted data; the origins are X itself,
/// the stationary point of f in Theta.
template <typename Scalar>
CalibrationResult<Scalar> fit_least_squares(const DataMatrix<Scalar>& x,
                                            const DataMatrix<Scalar>& y) {
  detail::check_pair(x, y, "fit_least_squares");
  const Matrix<Scalar> xa = augment(x).values();
  const Matrix<Scalar> ya = augment(y).values();
  FitDiagnostics diag;
  const Matrix<Scalar> bmat = regress_bmat(ya, xa, diag);
  auto transform = extract_transform(bmat, diag);
  return CalibrationResult<Scalar>{std::move(transform),
                                   DataMatrix<Scalar>(x.values(), SampleCheck::ApplyOnly),
                                   Estimator::LeastSquares, 0, std::move(diag)};
}

/// Least-squares transform paired with eigen-projected origins.
/// denoise_rank defaults to p; at rank n the projection is the identity and
/// the origins equal X.
template <typename Scalar>
CalibrationResult<Scalar> fit_hybrid(const DataMatrix<Scalar>& x, const DataMatrix<Scalar>& y,
                                     std::optional<Index> denoise_rank = std::nullopt,
                                     ProjectionPath path = ProjectionPath::Automatic) {
  detail::check_pair(x, y, "fit_hybrid");
  const Index q = x.dim();
  const Index rank = denoise_rank.value_or(q + 1);
  const Matrix<Scalar> xa = augment(x).values();
  const Matrix<Scalar> ya = augment(y).values();

  const Matrix<Scalar> theta = project_leading_subspace(xa, ya, rank, path);
  FitDiagnostics diag;
  const Matrix<Scalar> bmat = regress_bmat(ya, xa, diag);
  auto transform = extract_transform(bmat, diag);
  return CalibrationResult<Scalar>{std::move(transform),
                                   DataMatrix<Scalar>(theta.topRows(q), SampleCheck::ApplyOnly),
                                   Estimator::Hybrid, rank, std::move(diag)};
}

template <typename Scalar>
CalibrationResult<Scalar> fit(Estimator method, const DataMatrix<Scalar>& x,
                              const DataMatrix<Scalar>& y, const FitOptions& opts = {}) {
  switch (method) {
    case Estimator::GleserWatson: return fit_gleser_watson(x, y, false, opts.path);
    case Estimator::GleserWatsonDenoised: return fit_gleser_watson(x, y, true, opts.path);
    case Estimator::LeastSquares: return fit_least_squares(x, y);
    case Estimator::Hybrid: return fit_hybrid(x, y, opts.denoise_rank, opts.path);
  }
  throw ArgumentError("fit: unknown estimator");
}

/// Column i of the result is A x_i + b.
template <typename Scalar>
DataMatrix<Scalar> apply_transform(const AffineTransform<Scalar>& t, const DataMatrix<Scalar>& x) {
  if (t.dim() != x.dim()) {
    std::ostringstream os;
    os << "apply_transform: transform dimension " << t.dim() << " but data dimension " << x.dim();
    throw ArgumentError(os.str());
  }
  Matrix<Scalar> out = t.a() * x.values();
  out.colwise() += t.b();
  return DataMatrix<Scalar>(std::move(out), SampleCheck::ApplyOnly);
}

}  // namespace affcal
