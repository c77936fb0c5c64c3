#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <string>

#include "isoscope/error.hpp"
#include "isoscope/rng.hpp"

namespace isoscope {

/// N x d matrix, one point per row.
template <typename Scalar>
using PointCloudT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using PointCloud = PointCloudT<double>;
using Vector = VectorT<double>;
using Matrix = Eigen::MatrixXd;

enum class Estimator { Unbiased, Population };

inline const char* to_string(Estimator e) { return e == Estimator::Unbiased ? "unbiased" : "population"; }

/// Symmetric PSD d x d covariance with the number of samples it came from.
template <typename Scalar>
class CovMatrixT {
 public:
  using MatrixType = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  CovMatrixT() = default;

  /// Symmetrizes `values` on construction.
  template <typename Derived>
  explicit CovMatrixT(const Eigen::MatrixBase<Derived>& values, std::int64_t sample_count = 1,
                      Estimator estimator = Estimator::Unbiased)
      : sample_count_(sample_count), estimator_(estimator) {
    if (values.rows() != values.cols()) {
      throw Error(ErrorCode::DimensionMismatch, "covariance must be square, got " + std::to_string(values.rows()) +
                                                    "x" + std::to_string(values.cols()));
    }
    if (sample_count < 1) throw Error(ErrorCode::InvalidArgument, "sample_count must be positive");
    if (!values.allFinite()) throw Error(ErrorCode::NonFiniteInput, "covariance has non-finite entries");
    values_ = (values + values.transpose()) * Scalar(0.5);
  }

  /// Identity covariance, useful as a neutral shrinkage target.
  static CovMatrixT identity(Eigen::Index d) { return CovMatrixT(MatrixType::Identity(d, d)); }

  const MatrixType& values() const noexcept { return values_; }
  Eigen::Index dim() const noexcept { return values_.rows(); }
  std::int64_t sample_count() const noexcept { return sample_count_; }
  Estimator estimator() const noexcept { return estimator_; }

 private:
  MatrixType values_;
  std::int64_t sample_count_ = 1;
  Estimator estimator_ = Estimator::Unbiased;
};

using CovMatrix = CovMatrixT<double>;

/// Eigenvalues sorted descending, negative round-off clamped to zero.
template <typename Scalar>
struct SpectrumT {
  VectorT<Scalar> eigenvalues;

  Eigen::Index size() const noexcept { return eigenvalues.size(); }
  Scalar max() const { return eigenvalues.size() ? eigenvalues(0) : Scalar(0); }
};

using Spectrum = SpectrumT<double>;

/// Spectrum together with the orthonormal eigenvectors (column k pairs with
/// eigenvalue k).
template <typename Scalar>
struct EigensystemT {
  SpectrumT<Scalar> spectrum;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> vectors;
};

using Eigensystem = EigensystemT<double>;

inline constexpr double kNegativeEigenTolerance = 1e-9;

template <typename Derived>
void check_cloud(const Eigen::MatrixBase<Derived>& X, Eigen::Index min_rows = 2, Eigen::Index min_cols = 2) {
  if (X.rows() < min_rows || X.cols() < min_cols) {
    throw Error(ErrorCode::DimensionTooSmall, "point cloud is " + std::to_string(X.rows()) + "x" +
                                                  std::to_string(X.cols()) + ", need at least " +
                                                  std::to_string(min_rows) + "x" + std::to_string(min_cols));
  }
  if (!X.allFinite()) throw Error(ErrorCode::NonFiniteInput, "point cloud has NaN/Inf entries");
}

/// Mean-centered covariance of the rows of X.
template <typename Derived>
CovMatrixT<typename Derived::Scalar> covariance(const Eigen::MatrixBase<Derived>& X,
                                                Estimator estimator = Estimator::Unbiased) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  check_cloud(X, 2, 1);
  const auto n = X.rows();
  const Mat centered = X.rowwise() - X.colwise().mean();
  const Scalar denom = estimator == Estimator::Unbiased ? Scalar(n - 1) : Scalar(n);
  Mat cov = Mat::Zero(X.cols(), X.cols());
  cov.template selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose(), Scalar(1) / denom);
  cov.template triangularView<Eigen::StrictlyUpper>() = cov.transpose();
  return CovMatrixT<Scalar>(cov, n, estimator);
}

namespace detail {

template <typename Scalar>
VectorT<Scalar> clamp_descending(const VectorT<Scalar>& ascending) {
  const auto d = ascending.size();
  VectorT<Scalar> out = ascending.reverse();
  const Scalar top = std::max(Scalar(0), out.size() ? out.cwiseAbs().maxCoeff() : Scalar(0));
  for (Eigen::Index i = 0; i < d; ++i) {
    if (out(i) < Scalar(0)) {
      if (out(i) < -Scalar(kNegativeEigenTolerance) * top) {
        throw Error(ErrorCode::NotPositiveSemidefinite,
                    "eigenvalue " + std::to_string(double(out(i))) + " below tolerance of max " + std::to_string(double(top)));
      }
      out(i) = Scalar(0);
    }
  }
  return out;
}

}  // namespace detail

/// Eigenvalues and eigenvectors of a symmetric matrix, descending order.
///
/// Eigen's self-adjoint solver does Householder tridiagonalization followed
/// by implicit symmetric QR iteration.
template <typename Scalar>
EigensystemT<Scalar> sym_eigen(const CovMatrixT<Scalar>& C) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::SelfAdjointEigenSolver<Mat> solver(C.values(), Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::ConvergenceFailure, "symmetric eigensolver did not converge");
  }
  EigensystemT<Scalar> out;
  out.spectrum.eigenvalues = detail::clamp_descending<Scalar>(solver.eigenvalues());
  out.vectors = solver.eigenvectors().rowwise().reverse();
  return out;
}

template <typename Scalar>
SpectrumT<Scalar> sym_eigvals(const CovMatrixT<Scalar>& C) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::SelfAdjointEigenSolver<Mat> solver(C.values(), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::ConvergenceFailure, "symmetric eigensolver did not converge");
  }
  return SpectrumT<Scalar>{detail::clamp_descending<Scalar>(solver.eigenvalues())};
}

/// RDA shrinkage: (1 - zeta) * sigma_x + zeta * sigma_s. zeta = 0 is no shrinkage.
template <typename Scalar>
CovMatrixT<Scalar> shrink(const CovMatrixT<Scalar>& sigma_x, const CovMatrixT<Scalar>& sigma_s, Scalar zeta) {
  if (sigma_x.dim() != sigma_s.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "shrinkage target is " + std::to_string(sigma_s.dim()) +
                                                  "-dimensional, sample covariance is " +
                                                  std::to_string(sigma_x.dim()));
  }
  if (!(zeta >= Scalar(0) && zeta <= Scalar(1))) {
    throw Error(ErrorCode::InvalidArgument, "zeta must lie in [0, 1]");
  }
  if (zeta == Scalar(0)) return sigma_x;
  if (zeta == Scalar(1)) return sigma_s;
  return CovMatrixT<Scalar>((Scalar(1) - zeta) * sigma_x.values() + zeta * sigma_s.values(),
                            sigma_x.sample_count(), sigma_x.estimator());
}

/// Fills rows [first_row, first_row + n) of the virtual infinite sample
/// stream for `seed`. Row r depends only on (seed, r).
template <typename MeanDerived, typename CovDerived>
PointCloudT<typename MeanDerived::Scalar> sample_gaussian_rows(const Eigen::MatrixBase<MeanDerived>& mean,
                                                               const Eigen::MatrixBase<CovDerived>& diag_cov,
                                                               std::uint64_t first_row, Eigen::Index n,
                                                               std::uint64_t seed) {
  using Scalar = typename MeanDerived::Scalar;
  if (mean.size() != diag_cov.size()) {
    throw Error(ErrorCode::DimensionMismatch, "mean and diag_cov lengths differ");
  }
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "sample count must be >= 1");
  if ((diag_cov.array() < Scalar(0)).any()) throw Error(ErrorCode::NegativeVariance, "diag_cov has a negative entry");
  if (!mean.allFinite() || !diag_cov.allFinite()) throw Error(ErrorCode::NonFiniteInput, "non-finite distribution parameters");
  const auto d = mean.size();
  const VectorT<Scalar> sd = diag_cov.cwiseSqrt();
  PointCloudT<Scalar> X(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    CounterRng rng(seed, first_row + static_cast<std::uint64_t>(i));
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = mean(j) + sd(j) * Scalar(rng.normal());
  }
  return X;
}

/// n independent draws from N(mean, diag(diag_cov)); deterministic in seed.
template <typename MeanDerived, typename CovDerived>
PointCloudT<typename MeanDerived::Scalar> sample_gaussian(const Eigen::MatrixBase<MeanDerived>& mean,
                                                          const Eigen::MatrixBase<CovDerived>& diag_cov, Eigen::Index n,
                                                          std::uint64_t seed) {
  return sample_gaussian_rows(mean, diag_cov, 0, n, seed);
}

/// Random orthogonal d x d matrix (QR of a Gaussian matrix with sign fix).
inline Matrix random_orthogonal(Eigen::Index d, std::uint64_t seed) {
  const Matrix G = sample_gaussian(Vector::Zero(d), Vector::Ones(d), d, seed);
  Eigen::HouseholderQR<Matrix> qr(G);
  Matrix Q = qr.householderQ();
  const Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (R(j, j) < 0) Q.col(j) *= -1.0;
  }
  return Q;
}

}  // namespace isoscope
