#pragma once

#include <cmath>
#include <cstdint>

#include "isoscope/tensor.hpp"

namespace isoscope {

/// IsoScore* value with every intermediate of the forward pass.
template <typename Scalar>
struct IsoReportT {
  Scalar score = 0;   // iota
  Scalar defect = 0;  // delta
  Scalar phi = 0;
  SpectrumT<Scalar> raw_spectrum;
  VectorT<Scalar> normalized_spectrum;
  Scalar zeta = 0;
  bool used_shrinkage = false;
};

using IsoReport = IsoReportT<double>;

/// Monte-Carlo estimate of a pairwise statistic.
struct MetricSample {
  std::int64_t pair_count = 0;
  std::uint64_t seed = 0;
  double value = 0;
};

/// Steps from a (nonnegative) spectrum to the isotropy score: normalize to
/// norm sqrt(d), measure the defect from the all-ones vector, map to [0, 1].
template <typename Scalar>
IsoReportT<Scalar> score_spectrum(const SpectrumT<Scalar>& spectrum) {
  using std::sqrt;
  const auto d = spectrum.size();
  if (d < 2) throw Error(ErrorCode::DimensionTooSmall, "spectrum needs d >= 2");
  const Scalar norm = spectrum.eigenvalues.norm();
  if (!(norm > Scalar(0))) throw Error(ErrorCode::ZeroSpectrum, "all eigenvalues are zero");

  const Scalar dd = Scalar(d);
  const Scalar sqrt_d = sqrt(dd);
  IsoReportT<Scalar> r;
  r.raw_spectrum = spectrum;
  r.normalized_spectrum = sqrt_d * spectrum.eigenvalues / norm;
  const Scalar delta = (r.normalized_spectrum.array() - Scalar(1)).matrix().norm() / sqrt(Scalar(2) * (dd - sqrt_d));
  const Scalar c = dd - delta * delta * (dd - sqrt_d);
  r.defect = std::clamp(delta, Scalar(0), Scalar(1));
  r.phi = c * c / (dd * dd);
  r.score = std::clamp((dd * r.phi - Scalar(1)) / (dd - Scalar(1)), Scalar(0), Scalar(1));
  return r;
}

/// IsoScore*: isotropy of the RDA-shrunk covariance
/// (1 - zeta) * cov(X) + zeta * sigma_s. zeta = 0 ignores sigma_s.
template <typename Derived>
IsoReportT<typename Derived::Scalar> isoscore_star(const Eigen::MatrixBase<Derived>& X,
                                                   typename Derived::Scalar zeta,
                                                   const CovMatrixT<typename Derived::Scalar>& sigma_s,
                                                   Estimator estimator = Estimator::Unbiased) {
  using Scalar = typename Derived::Scalar;
  check_cloud(X);
  if (sigma_s.dim() != X.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "shrinkage matrix is " + std::to_string(sigma_s.dim()) +
                                                  "-dimensional, cloud has d=" + std::to_string(X.cols()));
  }
  const auto sigma_x = covariance(X, estimator);
  const auto sigma_zeta = shrink(sigma_x, sigma_s, zeta);
  auto report = score_spectrum(sym_eigvals(sigma_zeta));
  report.zeta = zeta;
  report.used_shrinkage = zeta > Scalar(0);
  return report;
}

/// IsoScore* applied to a covariance directly (e.g. a known population covariance).
template <typename Scalar>
IsoReportT<Scalar> isoscore_star_cov(const CovMatrixT<Scalar>& sigma_x, Scalar zeta, const CovMatrixT<Scalar>& sigma_s) {
  auto report = score_spectrum(sym_eigvals(shrink(sigma_x, sigma_s, zeta)));
  report.zeta = zeta;
  report.used_shrinkage = zeta > Scalar(0);
  return report;
}

/// Classic IsoScore: rotate X onto its principal axes, take the diagonal of
/// the covariance of the rotated points, and score that diagonal.
template <typename Derived>
IsoReportT<typename Derived::Scalar> isoscore(const Eigen::MatrixBase<Derived>& X,
                                              Estimator estimator = Estimator::Unbiased) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  check_cloud(X);
  const auto eig = sym_eigen(covariance(X, estimator));
  const Mat centered = X.rowwise() - X.colwise().mean();
  const Mat pca = centered * eig.vectors;
  const Scalar denom = estimator == Estimator::Unbiased ? Scalar(X.rows() - 1) : Scalar(X.rows());
  VectorT<Scalar> diag = pca.colwise().squaredNorm().transpose() / denom;
  std::sort(diag.data(), diag.data() + diag.size(), std::greater<Scalar>());
  auto report = score_spectrum(SpectrumT<Scalar>{diag});
  report.zeta = 0;
  report.used_shrinkage = false;
  return report;
}

/// Mean cosine similarity over `pair_count` index pairs drawn uniformly
/// with replacement, i != j.
template <typename Derived>
MetricSample avg_random_cosine(const Eigen::MatrixBase<Derived>& X, std::int64_t pair_count, std::uint64_t seed) {
  check_cloud(X, 2, 1);
  if (pair_count < 1) throw Error(ErrorCode::InvalidArgument, "pair_count must be positive");
  const auto n = static_cast<std::uint64_t>(X.rows());
  CounterRng rng(seed, 0xC05);
  double sum = 0.0;
  for (std::int64_t p = 0; p < pair_count; ++p) {
    std::uint64_t i = rng.below(n);
    std::uint64_t j = rng.below(n);
    while (j == i) j = rng.below(n);
    const auto a = X.row(static_cast<Eigen::Index>(i));
    const auto b = X.row(static_cast<Eigen::Index>(j));
    const double na = double(a.norm());
    const double nb = double(b.norm());
    if (na == 0.0 || nb == 0.0) {
      throw Error(ErrorCode::ZeroVectorSampled, "row " + std::to_string(na == 0.0 ? i : j) + " has zero norm");
    }
    sum += double(a.dot(b)) / (na * nb);
  }
  return MetricSample{pair_count, seed, std::clamp(sum / double(pair_count), -1.0, 1.0)};
}

inline constexpr double kPartitionExponentLimit = 700.0;

/// Partition-function isotropy min_c Z(c) / max_c Z(c), Z(c) = sum_x exp(c.x),
/// over the unit eigenvectors of X^T X and their negations.
template <typename Derived>
MetricSample partition_isotropy(const Eigen::MatrixBase<Derived>& X) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  check_cloud(X);
  const Mat gram = X.transpose() * X;
  const auto eig = sym_eigen(CovMatrixT<Scalar>(gram, X.rows()));
  const Mat proj = X * eig.vectors;  // N x d, column k = c_k . x
  if (proj.cwiseAbs().maxCoeff() > Scalar(kPartitionExponentLimit)) {
    throw Error(ErrorCode::OverflowGuard, "projection exceeds exp() range; rescale the input");
  }
  double zmin = std::numeric_limits<double>::infinity();
  double zmax = 0.0;
  for (Eigen::Index k = 0; k < proj.cols(); ++k) {
    for (double sign : {1.0, -1.0}) {
      double z = 0.0;
      for (Eigen::Index i = 0; i < proj.rows(); ++i) z += std::exp(sign * double(proj(i, k)));
      zmin = std::min(zmin, z);
      zmax = std::max(zmax, z);
    }
  }
  return MetricSample{X.rows(), 0, std::clamp(zmin / zmax, 0.0, 1.0)};
}

}  // namespace isoscope
