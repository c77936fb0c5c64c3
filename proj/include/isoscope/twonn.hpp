#pragma once

#include "isoscope/tensor.hpp"

namespace isoscope {

struct IdEstimate {
  double id_value = 0;
  Eigen::Index n_used = 0;
  double discard_fraction = 0;
};

inline constexpr double kDefaultDiscardFraction = 0.1;

/// Ratio r2 / r1 of second to first nearest-neighbor distance for every row,
/// by exact pairwise search.
Vector nearest_neighbor_ratios(const PointCloud& X);

/// TwoNN intrinsic dimension. The largest `discard_fraction` of the ratios
/// are treated as right-censored at the largest retained ratio, which makes
/// the estimate the maximum-likelihood one for the Pareto ratio law.
IdEstimate twonn_id(const PointCloud& X, double discard_fraction = kDefaultDiscardFraction);

}  // namespace isoscope
