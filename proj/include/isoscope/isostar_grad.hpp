#pragma once

#include <cmath>

#include "isoscope/isotropy.hpp"

namespace isoscope {

/// d(score)/d(X), same shape as the input cloud.
template <typename Scalar>
struct CloudGradientT {
  PointCloudT<Scalar> values;
  /// Set when the shrunk covariance had a near-repeated eigenvalue and the
  /// deterministic diagonal jitter was applied before differentiating.
  bool jittered = false;
};

using CloudGradient = CloudGradientT<double>;

enum class DegeneracyPolicy { Throw, Jitter };

inline constexpr double kEigenGapTolerance = 1e-8;
inline constexpr double kEigenJitter = 1e-10;

struct GradOptions {
  DegeneracyPolicy degeneracy = DegeneracyPolicy::Throw;
  Estimator estimator = Estimator::Unbiased;
};

namespace detail {

template <typename Scalar>
bool has_close_eigenvalues(const VectorT<Scalar>& descending) {
  const Scalar top = descending.size() ? descending(0) : Scalar(0);
  for (Eigen::Index i = 0; i + 1 < descending.size(); ++i) {
    if (descending(i) - descending(i + 1) < Scalar(kEigenGapTolerance) * top) return true;
  }
  return false;
}

/// d(score)/d(eigenvalues) for a nonnegative spectrum, chaining
/// iota <- phi <- delta^2 <- normalized spectrum <- raw spectrum.
template <typename Scalar>
VectorT<Scalar> score_wrt_eigenvalues(const VectorT<Scalar>& lambda) {
  using std::sqrt;
  const Scalar d = Scalar(lambda.size());
  const Scalar sqrt_d = sqrt(d);
  const Scalar norm = lambda.norm();
  if (!(norm > Scalar(0))) throw Error(ErrorCode::ZeroSpectrum, "all eigenvalues are zero");
  const VectorT<Scalar> normalized = sqrt_d * lambda / norm;
  const VectorT<Scalar> excess = normalized.array() - Scalar(1);
  const Scalar delta_sq = excess.squaredNorm() / (Scalar(2) * (d - sqrt_d));
  const Scalar c = d - delta_sq * (d - sqrt_d);

  const Scalar diota_dphi = d / (d - Scalar(1));
  const Scalar dphi_ddelta_sq = -Scalar(2) * c * (d - sqrt_d) / (d * d);
  const VectorT<Scalar> ddelta_sq_dnormalized = excess / (d - sqrt_d);
  const VectorT<Scalar> g = diota_dphi * dphi_ddelta_sq * ddelta_sq_dnormalized;
  // Jacobian of sqrt(d) * lambda / |lambda| applied transposed to g.
  return sqrt_d * (g / norm - lambda * (lambda.dot(g) / (norm * norm * norm)));
}

}  // namespace detail

/// Exact gradient of the IsoScore* score with respect to every coordinate of
/// X. The shrinkage target is a constant; only cov(X) carries gradient.
template <typename Derived>
CloudGradientT<typename Derived::Scalar> grad_isoscore_star(const Eigen::MatrixBase<Derived>& X,
                                                            typename Derived::Scalar zeta,
                                                            const CovMatrixT<typename Derived::Scalar>& sigma_s,
                                                            const GradOptions& options = {}) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  check_cloud(X);
  if (sigma_s.dim() != X.cols()) throw Error(ErrorCode::DimensionMismatch, "shrinkage matrix dimension differs from cloud");
  const auto sigma_x = covariance(X, options.estimator);
  auto sigma_zeta = shrink(sigma_x, sigma_s, zeta);
  auto eig = sym_eigen(sigma_zeta);

  CloudGradientT<Scalar> out;
  if (detail::has_close_eigenvalues(eig.spectrum.eigenvalues)) {
    if (options.degeneracy == DegeneracyPolicy::Throw) {
      throw Error(ErrorCode::DegenerateSpectrum, "eigenvalue gap below 1e-8 * lambda_max");
    }
    const auto d = sigma_zeta.dim();
    const Scalar top = eig.spectrum.max();
    const VectorT<Scalar> jitter = VectorT<Scalar>::LinSpaced(d, Scalar(1), Scalar(d)) * (Scalar(kEigenJitter) * top);
    Mat jittered = sigma_zeta.values();
    jittered.diagonal() += jitter;
    eig = sym_eigen(CovMatrixT<Scalar>(jittered, sigma_zeta.sample_count(), sigma_zeta.estimator()));
    out.jittered = true;
  }

  const VectorT<Scalar> dlambda = detail::score_wrt_eigenvalues(eig.spectrum.eigenvalues);
  // d lambda_k / d Sigma = v_k v_k^T
  const Mat dsigma = eig.vectors * dlambda.asDiagonal() * eig.vectors.transpose();
  const Scalar denom = options.estimator == Estimator::Unbiased ? Scalar(X.rows() - 1) : Scalar(X.rows());
  const Mat centered = X.rowwise() - X.colwise().mean();
  out.values = (Scalar(2) * (Scalar(1) - zeta) / denom) * centered * dsigma;
  return out;
}

/// Central-difference gradient of the IsoScore* score; 2*N*d forward passes.
template <typename Derived>
CloudGradientT<typename Derived::Scalar> finite_diff_grad(const Eigen::MatrixBase<Derived>& X,
                                                          typename Derived::Scalar zeta,
                                                          const CovMatrixT<typename Derived::Scalar>& sigma_s,
                                                          typename Derived::Scalar h,
                                                          Estimator estimator = Estimator::Unbiased) {
  using Scalar = typename Derived::Scalar;
  if (!(h > Scalar(0))) throw Error(ErrorCode::InvalidArgument, "finite-difference step must be positive");
  PointCloudT<Scalar> work = X;
  CloudGradientT<Scalar> out;
  out.values.resize(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const Scalar saved = work(i, j);
      work(i, j) = saved + h;
      const Scalar up = isoscore_star(work, zeta, sigma_s, estimator).score;
      work(i, j) = saved - h;
      const Scalar down = isoscore_star(work, zeta, sigma_s, estimator).score;
      work(i, j) = saved;
      out.values(i, j) = (up - down) / (Scalar(2) * h);
    }
  }
  return out;
}

/// max |a - b| / (1e-8 + max |b|)
template <typename Scalar>
Scalar max_relative_error(const PointCloudT<Scalar>& analytic, const PointCloudT<Scalar>& reference) {
  return (analytic - reference).cwiseAbs().maxCoeff() / (Scalar(1e-8) + reference.cwiseAbs().maxCoeff());
}

}  // namespace isoscope
