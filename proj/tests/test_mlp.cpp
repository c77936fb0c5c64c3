#include <gtest/gtest.h>

#include <cmath>

#include "isoscope/mlp.hpp"
#include "oracles.hpp"

using namespace isoscope;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an isoscope::Error";
  return ErrorCode::InvalidArgument;
}

MlpModel identity_model(Eigen::Index d, std::size_t hidden_layers, Eigen::Index classes) {
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l < hidden_layers; ++l) layers.push_back({Matrix::Identity(d, d), Vector::Zero(d), Activation::Identity});
  layers.push_back({Matrix::Identity(classes, d), Vector::Zero(classes), Activation::Identity});
  return MlpModel(layers);
}

std::vector<int> alternating_labels(Eigen::Index n, int classes) {
  std::vector<int> y(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = int(i % std::size_t(classes));
  return y;
}

}  // namespace

TEST(Forward, IdentityModelPassesInputThrough) {
  const MlpModel m = identity_model(3, 1, 3);
  const PointCloud X = oracle::lcg_gaussian(5, 3, 1);
  const auto pass = forward_capture(m, X);
  ASSERT_EQ(pass.activations.size(), 1u);
  EXPECT_EQ(pass.activations[0], X);
  EXPECT_EQ(pass.logits, X);
}

TEST(Forward, DeterministicForSeed) {
  const PointCloud X = oracle::lcg_gaussian(10, 4, 2);
  const auto a = forward_capture(MlpModel::create(4, {8, 8}, 3, Activation::Tanh, 5), X);
  const auto b = forward_capture(MlpModel::create(4, {8, 8}, 3, Activation::Tanh, 5), X);
  EXPECT_EQ(a.logits, b.logits);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(a.activations[l], b.activations[l]);
}

TEST(Forward, ReluNonNegative) {
  const auto pass = forward_capture(MlpModel::create(4, {16, 16}, 2, Activation::Relu, 1), oracle::lcg_gaussian(50, 4, 3));
  for (const auto& a : pass.activations) EXPECT_GE(a.minCoeff(), 0.0);
}

TEST(Forward, DimensionMismatch) {
  const MlpModel m = MlpModel::create(4, {8}, 2, Activation::Tanh, 1);
  EXPECT_EQ(code_of([&] { forward_capture(m, oracle::lcg_gaussian(5, 3, 1)); }), ErrorCode::DimensionMismatch);
}

TEST(PenaltyCloud, StacksOrSelects) {
  const std::vector<Matrix> acts = {Matrix::Ones(3, 2), 2 * Matrix::Ones(3, 2)};
  const Matrix g = penalty_cloud(acts, LayerScope::global());
  EXPECT_EQ(g.rows(), 6);
  EXPECT_EQ(g(4, 0), 2.0);
  EXPECT_EQ(penalty_cloud(acts, LayerScope::single(1)), acts[1]);
  EXPECT_EQ(code_of([] { penalty_cloud({Matrix::Ones(3, 2), Matrix::Ones(3, 4)}, LayerScope::global()); }),
            ErrorCode::ConfigError);
}

TEST(CosReg, AnalyticValues) {
  Matrix same(4, 3);
  same.rowwise() = Eigen::RowVector3d(1, 2, 3);
  EXPECT_EQ(cosreg_penalty(same), 0.75);
  EXPECT_NEAR(cosreg_penalty(Matrix::Identity(4, 4)), 0.0, 1e-15);
  Matrix pm(2, 3);
  pm << 1, 2, 3, -1, -2, -3;
  EXPECT_NEAR(cosreg_penalty(pm), -0.5, 1e-15);
}

TEST(CosReg, RowRescaleInvariant) {
  const Matrix H = oracle::lcg_gaussian(12, 5, 1);
  const Vector s = oracle::lcg_gaussian(12, 1, 2).col(0).cwiseAbs().array() + 0.1;
  EXPECT_NEAR(cosreg_penalty(s.asDiagonal() * H), cosreg_penalty(H), 1e-14);
}

TEST(CosReg, MatchesDoubleSum) {
  const Matrix H = oracle::lcg_gaussian(9, 4, 3);
  double s = 0.0;
  for (Eigen::Index i = 0; i < 9; ++i)
    for (Eigen::Index j = 0; j < 9; ++j)
      if (i != j) s += H.row(i).dot(H.row(j)) / (H.row(i).norm() * H.row(j).norm());
  EXPECT_NEAR(cosreg_penalty(H), s / 81.0, 1e-14);
}

TEST(CosReg, GradientMatchesFiniteDifference) {
  Matrix H = oracle::lcg_gaussian(7, 4, 5);
  const Matrix g = cosreg_gradient(H);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < H.rows(); ++i) {
    for (Eigen::Index j = 0; j < H.cols(); ++j) {
      const double keep = H(i, j);
      H(i, j) = keep + h;
      const double up = cosreg_penalty(H);
      H(i, j) = keep - h;
      const double down = cosreg_penalty(H);
      H(i, j) = keep;
      EXPECT_NEAR(g(i, j), (up - down) / (2 * h), 1e-8);
    }
  }
}

TEST(CosReg, ZeroRow) {
  Matrix H = Matrix::Ones(3, 2);
  H.row(1).setZero();
  EXPECT_EQ(code_of([&] { cosreg_penalty(H); }), ErrorCode::ZeroVectorRow);
}

TEST(IStarLoss, Examples) {
  const Matrix cloud = oracle::lcg_gaussian(20, 3, 1);
  const ShrinkageState state{CovMatrix::identity(3), 0};
  EXPECT_EQ(istar_loss(2.0, cloud, 0.5, state, 0.0), 2.0);
  // zeta = 1 with an identity target: the spectrum is exactly isotropic
  EXPECT_EQ(istar_loss(2.0, cloud, 1.0, state, -3.0), 2.0);
  EXPECT_NEAR(istar_objective(2.0, 0.4, -1.0), 1.4, 1e-15);
  const double score = isoscore_star(cloud, 0.5, state.sigma_s).score;
  EXPECT_NEAR(istar_loss(1.0, cloud, 0.5, state, 2.0) - 1.0, 2.0 * (1.0 - score), 1e-12);
}

TEST(IStarLoss, StepDecomposition) {
  const MlpModel m = MlpModel::create(4, {6, 6}, 3, Activation::Tanh, 3);
  const PointCloud X = oracle::lcg_gaussian(200, 4, 4);
  const auto state = refresh_shrinkage(m, X, 0);
  TrainConfig cfg;
  cfg.regularizer = Regularizer::IStar;
  cfg.lambda = -1.7;
  cfg.zeta = 0.3;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PointCloud batch = oracle::lcg_gaussian(16, 4, seed + 10);
    const auto labels = alternating_labels(16, 3);
    const auto step = loss_and_gradients(m, batch, labels, cfg, &state);
    const auto pass = forward_capture(m, batch);
    const Matrix cloud = penalty_cloud(pass.activations, LayerScope::global());
    EXPECT_NEAR(step.loss - step.ce, cfg.lambda * (1.0 - isoscore_star(cloud, cfg.zeta, state.sigma_s).score), 1e-12);
    EXPECT_NEAR(step.loss, istar_loss(step.ce, cloud, cfg.zeta, state, cfg.lambda), 1e-12);
  }
}

namespace {

void check_parameter_gradients(const TrainConfig& cfg) {
  MlpModel m = MlpModel::create(3, {5, 5}, 2, Activation::Tanh, 7);
  const PointCloud batch = oracle::lcg_gaussian(24, 3, 8);
  const auto labels = alternating_labels(24, 2);
  const auto state = refresh_shrinkage(m, oracle::lcg_gaussian(300, 3, 9), 0, cfg.layer_scope);
  const auto step = loss_and_gradients(m, batch, labels, cfg, &state);
  ASSERT_FALSE(step.jittered);
  const double h = 1e-6;
  double max_err = 0.0, max_ref = 0.0;
  for (std::size_t l = 0; l < m.layers().size(); ++l) {
    Matrix& W = m.layers()[l].weight;
    for (Eigen::Index i = 0; i < W.size(); ++i) {
      const double keep = W.data()[i];
      W.data()[i] = keep + h;
      const double up = loss_and_gradients(m, batch, labels, cfg, &state).loss;
      W.data()[i] = keep - h;
      const double down = loss_and_gradients(m, batch, labels, cfg, &state).loss;
      W.data()[i] = keep;
      const double fd = (up - down) / (2 * h);
      max_err = std::max(max_err, std::abs(fd - step.grads.weight[l].data()[i]));
      max_ref = std::max(max_ref, std::abs(fd));
    }
    Vector& b = m.layers()[l].bias;
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      const double keep = b(i);
      b(i) = keep + h;
      const double up = loss_and_gradients(m, batch, labels, cfg, &state).loss;
      b(i) = keep - h;
      const double down = loss_and_gradients(m, batch, labels, cfg, &state).loss;
      b(i) = keep;
      const double fd = (up - down) / (2 * h);
      max_err = std::max(max_err, std::abs(fd - step.grads.bias[l](i)));
      max_ref = std::max(max_ref, std::abs(fd));
    }
  }
  EXPECT_LT(max_err / (1e-8 + max_ref), 1e-5);
}

}  // namespace

TEST(Backprop, CrossEntropyOnly) {
  TrainConfig cfg;
  check_parameter_gradients(cfg);
}

TEST(Backprop, IStarGlobal) {
  TrainConfig cfg;
  cfg.regularizer = Regularizer::IStar;
  cfg.lambda = 2.5;
  cfg.zeta = 0.4;
  check_parameter_gradients(cfg);
}

TEST(Backprop, IStarSingleLayer) {
  TrainConfig cfg;
  cfg.regularizer = Regularizer::IStar;
  cfg.lambda = -1.5;
  cfg.zeta = 0.2;
  cfg.layer_scope = LayerScope::single(0);
  check_parameter_gradients(cfg);
}

TEST(Backprop, CosReg) {
  TrainConfig cfg;
  cfg.regularizer = Regularizer::CosReg;
  cfg.lambda = 1.0;
  check_parameter_gradients(cfg);
}

TEST(Backprop, PenaltyAloneMovesParameters) {
  const MlpModel m = MlpModel::create(4, {6, 6}, 2, Activation::Tanh, 1);
  const PointCloud X = oracle::lcg_gaussian(64, 4, 2);
  const auto state = refresh_shrinkage(m, X, 0);
  TrainConfig cfg;
  cfg.regularizer = Regularizer::IStar;
  cfg.lambda = 1.0;
  const auto step = loss_and_gradients(m, X.topRows(32), alternating_labels(32, 2), cfg, &state, 0.0);
  EXPECT_GT(step.grads.squared_norm(), 0.0);
  MlpModel moved = m;
  sgd_step(moved, step.grads, 0.1);
  EXPECT_NE(moved.layers()[0].weight, m.layers()[0].weight);

  cfg.regularizer = Regularizer::CosReg;
  EXPECT_GT(loss_and_gradients(m, X.topRows(32), alternating_labels(32, 2), cfg, nullptr, 0.0).grads.squared_norm(), 0.0);
}

TEST(Shrinkage, IdentityLayersReplicateSample) {
  const MlpModel m = identity_model(3, 2, 2);
  const PointCloud S = oracle::lcg_gaussian(40, 3, 6);
  PointCloud stacked(80, 3);
  stacked << S, S;
  EXPECT_LT((refresh_shrinkage(m, S, 0).sigma_s.values() - covariance(stacked).values()).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((refresh_shrinkage(m, S, 0, LayerScope::single(1)).sigma_s.values() - covariance(S).values())
                .cwiseAbs()
                .maxCoeff(),
            1e-14);
  EXPECT_EQ(refresh_shrinkage(m, S, 4).epoch_index, 4);
}

TEST(Shrinkage, DeterministicAndFullRank) {
  const MlpModel m = MlpModel::create(16, {32, 32, 32}, 4, Activation::Tanh, 2);
  const PointCloud S = sample_gaussian(Vector::Zero(16), Vector::Ones(16), 10000, 3);
  const auto a = refresh_shrinkage(m, S, 0, LayerScope::global(), 960);
  const auto b = refresh_shrinkage(m, S, 0, LayerScope::global(), 960);
  EXPECT_EQ(a.sigma_s.values(), b.sigma_s.values());
  EXPECT_EQ(a.sigma_s.dim(), 32);
  EXPECT_GT(oracle::jacobi_eigenvalues(a.sigma_s.values()).minCoeff(), 0.0);
}

TEST(Shrinkage, SampleTooSmall) {
  const MlpModel m = MlpModel::create(4, {8}, 2, Activation::Tanh, 2);
  EXPECT_EQ(code_of([&] { refresh_shrinkage(m, oracle::lcg_gaussian(50, 4, 1), 0, LayerScope::global(), 80); }),
            ErrorCode::SampleTooSmall);
}

TEST(Config, Validation) {
  TrainConfig ok;
  EXPECT_NO_THROW(ok.validate());
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return code_of([&] { c.validate(); });
  };
  EXPECT_EQ(bad([](TrainConfig& c) { c.batch_size = 1; }), ErrorCode::ConfigError);
  EXPECT_EQ(bad([](TrainConfig& c) { c.zeta = 1.2; }), ErrorCode::ConfigError);
  EXPECT_EQ(bad([](TrainConfig& c) {
              c.regularizer = Regularizer::IStar;
              c.shrinkage_sample_size = 100;
            }),
            ErrorCode::ConfigError);
  EXPECT_EQ(bad([](TrainConfig& c) {
              c.regularizer = Regularizer::IStar;
              c.hidden = {32, 16};
            }),
            ErrorCode::ConfigError);
  EXPECT_EQ(bad([](TrainConfig& c) { c.layer_scope = LayerScope::single(3); }), ErrorCode::ConfigError);
}

TEST(Split, DeterministicAndDisjoint) {
  const auto data = make_blobs(3, 4, 50, 1.0, 2);
  const auto [a1, b1] = split_dataset(data, 0.2, 7);
  const auto [a2, b2] = split_dataset(data, 0.2, 7);
  EXPECT_EQ(a1.points, a2.points);
  EXPECT_EQ(b1.size(), 30);
  EXPECT_EQ(a1.size() + b1.size(), data.size());
}

TEST(Train, SeparableBlobsReachHighAccuracy) {
  TrainConfig cfg;
  const auto data = make_blobs(2, 16, 2000, 3.0, 1);
  const auto run = train(cfg, data);
  ASSERT_EQ(run.report.epochs.size(), 10u);
  EXPECT_GT(run.report.final().val_accuracy, 0.95);
}

TEST(Train, Deterministic) {
  TrainConfig cfg;
  cfg.regularizer = Regularizer::IStar;
  cfg.lambda = 1.0;
  cfg.epochs = 2;
  const auto data = make_blobs(3, 8, 400, 3.0, 2);
  const auto a = train(cfg, data).report;
  const auto b = train(cfg, data).report;
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    EXPECT_EQ(a.epochs[e].train_loss, b.epochs[e].train_loss);
    EXPECT_EQ(a.epochs[e].val_isoscore, b.epochs[e].val_isoscore);
    EXPECT_EQ(a.epochs[e].layer_isoscores, b.epochs[e].layer_isoscores);
  }
}

TEST(Train, SignOfLambdaControlsIsotropy) {
  const auto data = make_blobs(4, 16, 1000, 3.0, 1);
  TrainConfig cfg;
  cfg.regularizer = Regularizer::IStar;
  cfg.lambda = 3.0;
  const double up = train(cfg, data).report.final().val_isoscore;
  cfg.lambda = -3.0;
  const double down = train(cfg, data).report.final().val_isoscore;
  EXPECT_GT(up, down);
}

TEST(Train, CosRegShrinksMeanVector) {
  const auto data = make_blobs(4, 16, 1000, 3.0, 1);
  TrainConfig cfg;
  const auto base = train(cfg, data).report.final();
  cfg.regularizer = Regularizer::CosReg;
  cfg.lambda = 1.0;
  const auto reg = train(cfg, data).report.final();
  EXPECT_LT(reg.final_mean_norm, 0.5 * base.final_mean_norm);
}
