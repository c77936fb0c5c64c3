#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "isoscope/isostar_grad.hpp"
#include "isoscope/tensor.hpp"

namespace isoscope {

enum class Activation { Relu, Tanh, Identity };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// y = act(x W^T + b) for a batch of row vectors x.
struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::Identity;
};

/// Dense network; every layer but the last is a hidden layer whose output
/// is captured, the last layer produces class logits.
class MlpModel {
 public:
  MlpModel() = default;
  explicit MlpModel(std::vector<DenseLayer> layers);

  /// Glorot-uniform weights, zero biases.
  static MlpModel create(Eigen::Index d_in, const std::vector<Eigen::Index>& hidden, Eigen::Index classes,
                         Activation hidden_activation, std::uint64_t seed);

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  std::size_t hidden_count() const noexcept { return layers_.empty() ? 0 : layers_.size() - 1; }
  Eigen::Index d_in() const { return layers_.front().weight.cols(); }
  Eigen::Index classes() const { return layers_.back().weight.rows(); }
  Eigen::Index hidden_width(std::size_t l) const { return layers_.at(l).weight.rows(); }

 private:
  std::vector<DenseLayer> layers_;
};

struct ForwardPass {
  Matrix logits;
  std::vector<Matrix> activations;  // per hidden layer, post-activation, rows = points
  std::vector<Matrix> preactivations;
};

ForwardPass forward_capture(const MlpModel& model, const PointCloud& batch);

/// Which hidden activations form the cloud the isotropy penalty sees.
struct LayerScope {
  enum class Kind { Global, Single } kind = Kind::Global;
  std::size_t layer = 0;

  static LayerScope global() { return {}; }
  static LayerScope single(std::size_t l) { return {Kind::Single, l}; }
  std::string str() const;
};

/// Union of the per-layer clouds (rows stacked) for global scope, or the
/// single designated layer.
Matrix penalty_cloud(const std::vector<Matrix>& activations, const LayerScope& scope);

enum class Regularizer { None, CosReg, IStar };

const char* to_string(Regularizer r);
Regularizer regularizer_from_string(const std::string& s);

struct TrainConfig {
  double lambda = 0.0;
  double zeta = 0.5;
  Regularizer regularizer = Regularizer::None;
  LayerScope layer_scope;
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
  int shrinkage_sample_size = 10000;
  std::vector<Eigen::Index> hidden = {32, 32, 32};
  Activation activation = Activation::Tanh;
  double validation_fraction = 0.2;

  /// Throws ConfigError on a violated invariant.
  void validate() const;
  Eigen::Index total_hidden_width() const;
};

/// Shrinkage covariance for one epoch, over the penalty-scope feature space.
struct ShrinkageState {
  CovMatrix sigma_s;
  int epoch_index = 0;
};

struct LabeledData {
  PointCloud points;
  std::vector<int> labels;

  Eigen::Index size() const { return points.rows(); }
  int classes() const;
  LabeledData subset(const std::vector<Eigen::Index>& rows) const;
};

/// Isotropic Gaussian clusters; centers uniform in [-center_box, center_box]^d.
LabeledData make_blobs(int classes, Eigen::Index d, Eigen::Index points_per_class, double spread, std::uint64_t seed,
                       double center_box = 10.0);

/// Mean over the rows i != j of cos(x_i, x_j), scaled by 1 / M^2.
double cosreg_penalty(const Matrix& H);
/// d(cosreg_penalty)/dH.
Matrix cosreg_gradient(const Matrix& H);

/// ce + lambda * (1 - score).
inline double istar_objective(double ce, double score, double lambda) { return ce + lambda * (1.0 - score); }

/// ce + lambda * (1 - IsoScore*(cloud, zeta, sigma_s)).
double istar_loss(double ce, const Matrix& cloud, double zeta, const ShrinkageState& state, double lambda);

double cross_entropy(const Matrix& logits, const std::vector<int>& labels);

ShrinkageState refresh_shrinkage(const MlpModel& model, const PointCloud& sample, int epoch,
                                 const LayerScope& scope = LayerScope::global(), Eigen::Index min_sample = 2);

struct ModelGradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  double squared_norm() const;
};

struct StepResult {
  double loss = 0;
  double ce = 0;
  double penalty = 0;  // unweighted: 1 - iota for I-STAR, cosine term for CosReg
  ModelGradients grads;
  bool jittered = false;
};

/// Loss and parameter gradients for one mini-batch. `ce_scale` multiplies the
/// cross-entropy term (0 isolates the regularizer).
StepResult loss_and_gradients(const MlpModel& model, const PointCloud& batch, const std::vector<int>& labels,
                              const TrainConfig& config, const ShrinkageState* state, double ce_scale = 1.0);

void sgd_step(MlpModel& model, const ModelGradients& grads, double learning_rate);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_accuracy = 0;
  double val_isoscore = 0;  // IsoScore* of the validation union cloud
  std::vector<double> layer_isoscores;
  double val_twonn_id = 0;  // NaN when the final layer has duplicate rows
  double final_mean_norm = 0;
  int jitter_count = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;

  const EpochRecord& final() const { return epochs.back(); }
};

struct TrainRun {
  TrainReport report;
  MlpModel model;
  std::optional<ShrinkageState> shrinkage;
  LabeledData validation;
};

/// Deterministic train/validation split by seed.
std::pair<LabeledData, LabeledData> split_dataset(const LabeledData& data, double validation_fraction,
                                                  std::uint64_t seed);

TrainRun train(const TrainConfig& config, const LabeledData& dataset);

double accuracy(const Matrix& logits, const std::vector<int>& labels);

/// IsoScore* (zeta = 0) of each hidden layer's activations on `data`.
std::vector<double> layer_isoscores(const MlpModel& model, const PointCloud& data);

}  // namespace isoscope
