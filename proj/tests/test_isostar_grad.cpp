#include <gtest/gtest.h>

#include "isoscope/isostar_grad.hpp"
#include "oracles.hpp"

using namespace isoscope;

namespace {

PointCloud anisotropic_cloud(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Vector scale = Vector::LinSpaced(d, 2.0, 0.3);
  return oracle::lcg_gaussian(n, d, seed) * scale.asDiagonal() * random_orthogonal(d, seed + 1);
}

CovMatrix random_target(Eigen::Index d, std::uint64_t seed) {
  const Matrix A = oracle::lcg_gaussian(d, d, seed + 333);
  return CovMatrix(A * A.transpose() / double(d) + 0.1 * Matrix::Identity(d, d));
}

}  // namespace

TEST(IsoStarGrad, FiniteDifferenceGrid) {
  for (Eigen::Index n : {16, 32, 64}) {
    for (Eigen::Index d : {4, 8, 16}) {
      for (double zeta : {0.0, 0.3, 0.8}) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
          const PointCloud X = anisotropic_cloud(n, d, seed * 17 + std::uint64_t(n + d));
          const CovMatrix S = random_target(d, seed);
          const auto g = grad_isoscore_star(X, zeta, S);
          const auto fd = finite_diff_grad(X, zeta, S, 1e-5);
          EXPECT_LT(max_relative_error(g.values, fd.values), 1e-4)
              << "N=" << n << " d=" << d << " zeta=" << zeta << " seed=" << seed;
        }
      }
    }
  }
}

TEST(IsoStarGrad, WorkedExample) {
  const PointCloud X = sample_gaussian(Vector::Zero(8), Vector::LinSpaced(8, 3.0, 0.5), 32, 11);
  const CovMatrix S = random_target(8, 11);
  const auto g = grad_isoscore_star(X, 0.3, S);
  const auto fd = finite_diff_grad(X, 0.3, S, 1e-5);
  EXPECT_LT(max_relative_error(g.values, fd.values), 1e-5);
  EXPECT_FALSE(g.jittered);
}

TEST(IsoStarGrad, ZetaOneHasZeroGradient) {
  const PointCloud X = anisotropic_cloud(20, 4, 1);
  EXPECT_EQ(grad_isoscore_star(X, 1.0, random_target(4, 1)).values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(IsoStarGrad, StepSizeStable) {
  const PointCloud X = anisotropic_cloud(32, 8, 5);
  const CovMatrix S = random_target(8, 5);
  const auto a = finite_diff_grad(X, 0.3, S, 1e-5);
  const auto b = finite_diff_grad(X, 0.3, S, 1e-6);
  EXPECT_LT(max_relative_error(a.values, b.values), 1e-4);
}

TEST(IsoStarGrad, ScaleAndTranslationDirectionsAreFlat) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PointCloud X = anisotropic_cloud(40, 6, seed);
    const auto g = grad_isoscore_star(X, 0.0, CovMatrix::identity(6)).values;
    const double gnorm = g.norm() * X.norm();
    // d/dt score(X + t X) and d/dt score(X + t 1 v^T)
    EXPECT_LT(std::abs((g.array() * X.array()).sum()) / gnorm, 1e-10);
    EXPECT_LT(g.colwise().sum().cwiseAbs().maxCoeff() / g.norm(), 1e-10);
  }
}

TEST(IsoStarGrad, RotationEquivariant) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PointCloud X = anisotropic_cloud(30, 5, seed);
    const Matrix Q = random_orthogonal(5, seed + 90);
    const auto g = grad_isoscore_star(X, 0.0, CovMatrix::identity(5)).values;
    const auto gq = grad_isoscore_star(PointCloud(X * Q), 0.0, CovMatrix::identity(5)).values;
    EXPECT_LT((gq - g * Q).cwiseAbs().maxCoeff() / g.cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(IsoStarGrad, AscentAndDescent) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PointCloud X = anisotropic_cloud(32, 6, seed + 200);
    const CovMatrix S = random_target(6, seed);
    const double base = isoscore_star(X, 0.3, S).score;
    const PointCloud g = grad_isoscore_star(X, 0.3, S).values;
    EXPECT_GT(isoscore_star(PointCloud(X + 1e-3 * g), 0.3, S).score, base) << seed;
    EXPECT_LT(isoscore_star(PointCloud(X - 1e-3 * g), 0.3, S).score, base) << seed;
  }
}

TEST(IsoStarGrad, DegenerateSpectrumPolicy) {
  PointCloud X(4, 2);
  X << 1, 0, -1, 0, 0, 1, 0, -1;
  try {
    grad_isoscore_star(X, 0.0, CovMatrix::identity(2));
    FAIL() << "expected DegenerateSpectrum";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateSpectrum);
    EXPECT_EQ(e.exit_code(), 4);
  }
  GradOptions opts;
  opts.degeneracy = DegeneracyPolicy::Jitter;
  const auto g = grad_isoscore_star(X, 0.0, CovMatrix::identity(2), opts);
  EXPECT_TRUE(g.jittered);
  EXPECT_TRUE(g.values.allFinite());
  // at the isotropic maximum the gradient vanishes
  EXPECT_LT(g.values.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(IsoStarGrad, FloatInstantiationCompiles) {
  const Eigen::MatrixXf X = anisotropic_cloud(16, 4, 2).cast<float>();
  const auto g = grad_isoscore_star(X, 0.0f, CovMatrixT<float>::identity(4));
  const auto gd = grad_isoscore_star(PointCloud(X.cast<double>()), 0.0, CovMatrix::identity(4));
  EXPECT_LT(max_relative_error(PointCloud(g.values.cast<double>()), gd.values), 1e-3);
}
