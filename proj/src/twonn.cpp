#include "isoscope/twonn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace isoscope {

Vector nearest_neighbor_ratios(const PointCloud& X) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  // Row-major copy so each point is contiguous.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> P = X;
  std::vector<double> best1(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  std::vector<double> best2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  auto offer = [&](Eigen::Index i, double dist2) {
    auto& b1 = best1[static_cast<std::size_t>(i)];
    auto& b2 = best2[static_cast<std::size_t>(i)];
    if (dist2 < b1) {
      b2 = b1;
      b1 = dist2;
    } else if (dist2 < b2) {
      b2 = dist2;
    }
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* a = P.data() + i * d;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double* b = P.data() + j * d;
      double s = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        const double t = a[k] - b[k];
        s += t * t;
      }
      offer(i, s);
      offer(j, s);
    }
  }
  Vector mu(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r1 = best1[static_cast<std::size_t>(i)];
    if (r1 == 0.0) throw Error(ErrorCode::DuplicatePoints, "row " + std::to_string(i) + " has a duplicate");
    mu(i) = std::sqrt(best2[static_cast<std::size_t>(i)] / r1);
  }
  return mu;
}

IdEstimate twonn_id(const PointCloud& X, double discard_fraction) {
  if (!(discard_fraction >= 0.0 && discard_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "discard fraction must lie in [0, 1)");
  }
  if (X.rows() < 20) throw Error(ErrorCode::TooFewPoints, "TwoNN needs at least 20 points");
  if (!X.allFinite()) throw Error(ErrorCode::NonFiniteInput, "point cloud has NaN/Inf entries");

  const Vector mu = nearest_neighbor_ratios(X);
  std::vector<double> log_mu(static_cast<std::size_t>(mu.size()));
  for (Eigen::Index i = 0; i < mu.size(); ++i) log_mu[static_cast<std::size_t>(i)] = std::log(mu(i));
  std::sort(log_mu.begin(), log_mu.end());

  const auto n = static_cast<Eigen::Index>(log_mu.size());
  const auto kept = static_cast<Eigen::Index>(std::floor(double(n) * (1.0 - discard_fraction)));
  if (kept < 10) throw Error(ErrorCode::TooFewPoints, "fewer than 10 points retained after discard");

  double sum = 0.0;
  for (Eigen::Index i = 0; i < kept; ++i) sum += log_mu[static_cast<std::size_t>(i)];
  const double cutoff = log_mu[static_cast<std::size_t>(kept - 1)];
  sum += double(n - kept) * cutoff;
  if (!(sum > 0.0)) throw Error(ErrorCode::DuplicatePoints, "all neighbor ratios equal one");
  return IdEstimate{double(kept) / sum, kept, discard_fraction};
}

}  // namespace isoscope
