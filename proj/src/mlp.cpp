#include "isoscope/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "isoscope/isotropy.hpp"
#include "isoscope/twonn.hpp"

namespace isoscope {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw Error(ErrorCode::ConfigError, "unknown activation '" + s + "'");
}

const char* to_string(Regularizer r) {
  switch (r) {
    case Regularizer::None: return "none";
    case Regularizer::CosReg: return "cosreg";
    case Regularizer::IStar: return "istar";
  }
  return "?";
}

Regularizer regularizer_from_string(const std::string& s) {
  if (s == "none") return Regularizer::None;
  if (s == "cosreg") return Regularizer::CosReg;
  if (s == "istar") return Regularizer::IStar;
  throw Error(ErrorCode::ConfigError, "unknown regularizer '" + s + "'");
}

std::string LayerScope::str() const {
  return kind == Kind::Global ? std::string("global") : "single:" + std::to_string(layer);
}

MlpModel::MlpModel(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw Error(ErrorCode::ConfigError, "model needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.bias.size() != layer.weight.rows()) {
      throw Error(ErrorCode::DimensionMismatch, "bias length differs from layer width at layer " + std::to_string(l));
    }
    if (l > 0 && layer.weight.cols() != layers_[l - 1].weight.rows()) {
      throw Error(ErrorCode::DimensionMismatch, "layer " + std::to_string(l) + " input width mismatch");
    }
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      throw Error(ErrorCode::NonFiniteInput, "non-finite parameters at layer " + std::to_string(l));
    }
  }
}

MlpModel MlpModel::create(Eigen::Index d_in, const std::vector<Eigen::Index>& hidden, Eigen::Index classes,
                          Activation hidden_activation, std::uint64_t seed) {
  std::vector<DenseLayer> layers;
  Eigen::Index in = d_in;
  CounterRng rng(seed, 0x1417);
  auto make = [&](Eigen::Index out, Activation act) {
    DenseLayer layer;
    const double limit = std::sqrt(6.0 / double(in + out));
    layer.weight.resize(out, in);
    for (Eigen::Index i = 0; i < out; ++i)
      for (Eigen::Index j = 0; j < in; ++j) layer.weight(i, j) = limit * (2.0 * rng.uniform() - 1.0);
    layer.bias = Vector::Zero(out);
    layer.activation = act;
    layers.push_back(std::move(layer));
    in = out;
  };
  for (auto width : hidden) make(width, hidden_activation);
  make(classes, Activation::Identity);
  return MlpModel(std::move(layers));
}

namespace {

Matrix apply(Activation act, const Matrix& z) {
  switch (act) {
    case Activation::Relu: return z.cwiseMax(0.0);
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::Identity: return z;
  }
  return z;
}

// dact/dz expressed through z and a = act(z).
Matrix derivative(Activation act, const Matrix& z, const Matrix& a) {
  switch (act) {
    case Activation::Relu: return (z.array() > 0.0).cast<double>().matrix();
    case Activation::Tanh: return (1.0 - a.array().square()).matrix();
    case Activation::Identity: return Matrix::Ones(z.rows(), z.cols());
  }
  return Matrix::Ones(z.rows(), z.cols());
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp().matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

}  // namespace

ForwardPass forward_capture(const MlpModel& model, const PointCloud& batch) {
  if (batch.cols() != model.d_in()) {
    throw Error(ErrorCode::DimensionMismatch, "batch has " + std::to_string(batch.cols()) + " columns, model expects " +
                                                  std::to_string(model.d_in()));
  }
  ForwardPass out;
  Matrix h = batch;
  const auto& layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = h * layers[l].weight.transpose();
    z.rowwise() += layers[l].bias.transpose();
    Matrix a = apply(layers[l].activation, z);
    if (l + 1 < layers.size()) {
      out.preactivations.push_back(std::move(z));
      out.activations.push_back(a);
    }
    h = std::move(a);
  }
  out.logits = std::move(h);
  return out;
}

Matrix penalty_cloud(const std::vector<Matrix>& activations, const LayerScope& scope) {
  if (activations.empty()) throw Error(ErrorCode::ConfigError, "model has no hidden layers");
  if (scope.kind == LayerScope::Kind::Single) {
    if (scope.layer >= activations.size()) {
      throw Error(ErrorCode::ConfigError, "layer scope index " + std::to_string(scope.layer) + " out of range");
    }
    return activations[scope.layer];
  }
  const auto width = activations.front().cols();
  Eigen::Index rows = 0;
  for (const auto& a : activations) {
    if (a.cols() != width) throw Error(ErrorCode::ConfigError, "global layer scope requires equal hidden widths");
    rows += a.rows();
  }
  Matrix out(rows, width);
  Eigen::Index r = 0;
  for (const auto& a : activations) {
    out.middleRows(r, a.rows()) = a;
    r += a.rows();
  }
  return out;
}

Eigen::Index TrainConfig::total_hidden_width() const {
  return std::accumulate(hidden.begin(), hidden.end(), Eigen::Index{0});
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigError, m); };
  if (batch_size < 2) fail("batch_size must be >= 2");
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(zeta >= 0.0 && zeta <= 1.0)) fail("zeta must lie in [0, 1]");
  if (!std::isfinite(lambda)) fail("lambda must be finite");
  if (hidden.empty()) fail("at least one hidden layer is required");
  for (auto w : hidden)
    if (w < 2) fail("hidden widths must be >= 2");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) fail("validation_fraction must lie in (0, 1)");
  if (layer_scope.kind == LayerScope::Kind::Global && regularizer == Regularizer::IStar) {
    for (auto w : hidden)
      if (w != hidden.front()) fail("global layer scope requires equal hidden widths");
  }
  if (layer_scope.kind == LayerScope::Kind::Single && layer_scope.layer >= hidden.size()) {
    fail("layer scope index out of range");
  }
  if (regularizer == Regularizer::IStar && shrinkage_sample_size < 10 * total_hidden_width()) {
    fail("shrinkage_sample_size must be >= 10 * total hidden width");
  }
}

int LabeledData::classes() const {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

LabeledData LabeledData::subset(const std::vector<Eigen::Index>& rows) const {
  LabeledData out;
  out.points.resize(static_cast<Eigen::Index>(rows.size()), points.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.points.row(static_cast<Eigen::Index>(i)) = points.row(rows[i]);
    out.labels.push_back(labels[static_cast<std::size_t>(rows[i])]);
  }
  return out;
}

LabeledData make_blobs(int classes, Eigen::Index d, Eigen::Index points_per_class, double spread, std::uint64_t seed,
                       double center_box) {
  if (classes < 2 || d < 1 || points_per_class < 1) throw Error(ErrorCode::InvalidArgument, "invalid blob geometry");
  if (!(spread >= 0.0)) throw Error(ErrorCode::NegativeVariance, "cluster spread must be nonnegative");
  CounterRng centers_rng(seed, 0xB10B);
  LabeledData out;
  out.points.resize(classes * points_per_class, d);
  out.labels.reserve(static_cast<std::size_t>(classes * points_per_class));
  const Vector var = Vector::Constant(d, spread * spread);
  for (int c = 0; c < classes; ++c) {
    Vector center(d);
    for (Eigen::Index j = 0; j < d; ++j) center(j) = center_box * (2.0 * centers_rng.uniform() - 1.0);
    const auto first = static_cast<std::uint64_t>(c) * static_cast<std::uint64_t>(points_per_class);
    out.points.middleRows(c * points_per_class, points_per_class) =
        sample_gaussian_rows(center, var, first, points_per_class, seed);
    out.labels.insert(out.labels.end(), static_cast<std::size_t>(points_per_class), c);
  }
  return out;
}

double cosreg_penalty(const Matrix& H) {
  const Vector norms = H.rowwise().norm();
  if ((norms.array() == 0.0).any()) throw Error(ErrorCode::ZeroVectorRow, "CosReg input has a zero row");
  const Matrix unit = norms.cwiseInverse().asDiagonal() * H;
  const double m = double(H.rows());
  const Eigen::RowVectorXd total = unit.colwise().sum();
  // sum_{i != j} <u_i, u_j> = |sum u|^2 - sum |u_i|^2
  return (total.squaredNorm() - unit.rowwise().squaredNorm().sum()) / (m * m);
}

Matrix cosreg_gradient(const Matrix& H) {
  const Vector norms = H.rowwise().norm();
  if ((norms.array() == 0.0).any()) throw Error(ErrorCode::ZeroVectorRow, "CosReg input has a zero row");
  const Matrix unit = norms.cwiseInverse().asDiagonal() * H;
  const double m = double(H.rows());
  const Eigen::RowVectorXd total = unit.colwise().sum();
  Matrix g_unit = (2.0 / (m * m)) * (unit.rowwise() - total) * -1.0;
  // project out the radial component and divide by the row norm
  const Vector radial = (g_unit.cwiseProduct(unit)).rowwise().sum();
  Matrix g = g_unit - radial.asDiagonal() * unit;
  return norms.cwiseInverse().asDiagonal() * g;
}

double istar_loss(double ce, const Matrix& cloud, double zeta, const ShrinkageState& state, double lambda) {
  if (lambda == 0.0) return ce;
  return istar_objective(ce, isoscore_star(cloud, zeta, state.sigma_s).score, lambda);
}

double cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  const Vector lse = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().rowwise().sum().log().matrix() +
                     logits.rowwise().maxCoeff();
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) total += lse(i) - logits(i, labels[static_cast<std::size_t>(i)]);
  return total / double(logits.rows());
}

double accuracy(const Matrix& logits, const std::vector<int>& labels) {
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (arg == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return double(correct) / double(logits.rows());
}

ShrinkageState refresh_shrinkage(const MlpModel& model, const PointCloud& sample, int epoch, const LayerScope& scope,
                                 Eigen::Index min_sample) {
  if (sample.rows() < std::max<Eigen::Index>(2, min_sample)) {
    throw Error(ErrorCode::SampleTooSmall, "shrinkage sample has " + std::to_string(sample.rows()) +
                                               " points, need " + std::to_string(std::max<Eigen::Index>(2, min_sample)));
  }
  const auto pass = forward_capture(model, sample);
  return ShrinkageState{covariance(penalty_cloud(pass.activations, scope)), epoch};
}

double ModelGradients::squared_norm() const {
  double s = 0.0;
  for (const auto& w : weight) s += w.squaredNorm();
  for (const auto& b : bias) s += b.squaredNorm();
  return s;
}

StepResult loss_and_gradients(const MlpModel& model, const PointCloud& batch, const std::vector<int>& labels,
                              const TrainConfig& config, const ShrinkageState* state, double ce_scale) {
  if (static_cast<std::size_t>(batch.rows()) != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "label count differs from batch size");
  }
  const auto pass = forward_capture(model, batch);
  const auto& layers = model.layers();
  const std::size_t hidden = model.hidden_count();
  const double m = double(batch.rows());

  StepResult out;
  out.ce = cross_entropy(pass.logits, labels);
  out.loss = out.ce;

  // dL/d(hidden activation) contributed by the regularizer
  std::vector<Matrix> extra(hidden);
  for (std::size_t l = 0; l < hidden; ++l) extra[l] = Matrix::Zero(pass.activations[l].rows(), pass.activations[l].cols());

  if (config.regularizer == Regularizer::IStar && config.lambda != 0.0) {
    if (state == nullptr) throw Error(ErrorCode::ConfigError, "I-STAR needs a shrinkage state");
    const Matrix cloud = penalty_cloud(pass.activations, config.layer_scope);
    const double score = isoscore_star(cloud, config.zeta, state->sigma_s).score;
    out.penalty = 1.0 - score;
    out.loss = out.ce + config.lambda * out.penalty;
    const auto g = grad_isoscore_star(cloud, config.zeta, state->sigma_s, GradOptions{DegeneracyPolicy::Jitter});
    out.jittered = g.jittered;
    const Matrix dcloud = -config.lambda * g.values;
    if (config.layer_scope.kind == LayerScope::Kind::Single) {
      extra[config.layer_scope.layer] += dcloud;
    } else {
      Eigen::Index r = 0;
      for (std::size_t l = 0; l < hidden; ++l) {
        extra[l] += dcloud.middleRows(r, pass.activations[l].rows());
        r += pass.activations[l].rows();
      }
    }
  } else if (config.regularizer == Regularizer::CosReg && config.lambda != 0.0) {
    const Matrix& last = pass.activations.back();
    out.penalty = cosreg_penalty(last);
    out.loss = out.ce + config.lambda * out.penalty;
    extra.back() += config.lambda * cosreg_gradient(last);
  }

  out.grads.weight.resize(layers.size());
  out.grads.bias.resize(layers.size());
  // output layer is linear: dL/dlogits = (softmax - onehot) / m
  Matrix delta = softmax_rows(pass.logits);
  for (Eigen::Index i = 0; i < batch.rows(); ++i) delta(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  delta *= ce_scale / m;

  for (std::size_t k = layers.size(); k-- > 0;) {
    const Matrix& input = k == 0 ? static_cast<const Matrix&>(batch) : pass.activations[k - 1];
    out.grads.weight[k] = delta.transpose() * input;
    out.grads.bias[k] = delta.colwise().sum().transpose();
    if (k == 0) break;
    Matrix dact = delta * layers[k].weight + extra[k - 1];
    delta = dact.cwiseProduct(derivative(layers[k - 1].activation, pass.preactivations[k - 1], pass.activations[k - 1]));
  }
  return out;
}

void sgd_step(MlpModel& model, const ModelGradients& grads, double learning_rate) {
  auto& layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].weight -= learning_rate * grads.weight[l];
    layers[l].bias -= learning_rate * grads.bias[l];
  }
}

namespace {

std::vector<Eigen::Index> permutation(Eigen::Index n, std::uint64_t seed, std::uint64_t stream) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  CounterRng rng(seed, stream);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

}  // namespace

std::pair<LabeledData, LabeledData> split_dataset(const LabeledData& data, double validation_fraction,
                                                  std::uint64_t seed) {
  const auto perm = permutation(data.size(), seed, 0x5B117);
  const auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * double(data.size())));
  if (n_val < 2 || n_val + 2 > perm.size()) throw Error(ErrorCode::TooFewPoints, "dataset too small to split");
  std::vector<Eigen::Index> val(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<Eigen::Index> tr(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  return {data.subset(tr), data.subset(val)};
}

std::vector<double> layer_isoscores(const MlpModel& model, const PointCloud& data) {
  const auto pass = forward_capture(model, data);
  std::vector<double> out;
  for (const auto& a : pass.activations) {
    out.push_back(isoscore_star(a, 0.0, CovMatrix::identity(a.cols())).score);
  }
  return out;
}

TrainRun train(const TrainConfig& config, const LabeledData& dataset) {
  config.validate();
  auto [train_set, val_set] = split_dataset(dataset, config.validation_fraction, config.seed);
  const int classes = dataset.classes();
  TrainRun run;
  run.model = MlpModel::create(dataset.points.cols(), config.hidden, classes, config.activation, config.seed);
  run.validation = val_set;

  PointCloud shrink_sample;
  if (config.regularizer == Regularizer::IStar) {
    const auto take = std::min<Eigen::Index>(config.shrinkage_sample_size, train_set.size());
    const auto perm = permutation(train_set.size(), config.seed, 0x5A3F);
    std::vector<Eigen::Index> rows(perm.begin(), perm.begin() + take);
    shrink_sample = train_set.subset(rows).points;
    run.shrinkage = refresh_shrinkage(run.model, shrink_sample, 0, config.layer_scope, 10 * config.total_hidden_width());
  }

  const Eigen::Index n = train_set.size();
  const Eigen::Index bs = config.batch_size;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = permutation(n, config.seed, 0xE90C + static_cast<std::uint64_t>(epoch));
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    int batches = 0;
    for (Eigen::Index start = 0; start + 2 <= n; start += bs) {
      const Eigen::Index len = std::min(bs, n - start);
      std::vector<Eigen::Index> rows(order.begin() + start, order.begin() + start + len);
      const LabeledData batch = train_set.subset(rows);
      const auto step = loss_and_gradients(run.model, batch.points, batch.labels, config,
                                           run.shrinkage ? &*run.shrinkage : nullptr);
      if (!std::isfinite(step.loss)) throw Error(ErrorCode::NonFiniteInput, "training loss diverged");
      sgd_step(run.model, step.grads, config.learning_rate);
      loss_sum += step.loss;
      rec.jitter_count += step.jittered ? 1 : 0;
      ++batches;
    }
    if (config.regularizer == Regularizer::IStar) {
      run.shrinkage = refresh_shrinkage(run.model, shrink_sample, epoch + 1, config.layer_scope);
    }

    rec.train_loss = loss_sum / double(std::max(batches, 1));
    const auto pass = forward_capture(run.model, val_set.points);
    rec.val_accuracy = accuracy(pass.logits, val_set.labels);
    for (const auto& a : pass.activations) {
      rec.layer_isoscores.push_back(isoscore_star(a, 0.0, CovMatrix::identity(a.cols())).score);
    }
    const bool equal_widths = std::all_of(config.hidden.begin(), config.hidden.end(),
                                          [&](Eigen::Index w) { return w == config.hidden.front(); });
    if (equal_widths) {
      const Matrix cloud = penalty_cloud(pass.activations, LayerScope::global());
      rec.val_isoscore = isoscore_star(cloud, 0.0, CovMatrix::identity(cloud.cols())).score;
    } else {
      rec.val_isoscore = std::numeric_limits<double>::quiet_NaN();
    }
    const Matrix& last = pass.activations.back();
    rec.final_mean_norm = last.colwise().mean().norm();
    try {
      rec.val_twonn_id = twonn_id(last).id_value;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DuplicatePoints) throw;
      rec.val_twonn_id = std::numeric_limits<double>::quiet_NaN();
    }
    run.report.epochs.push_back(std::move(rec));
  }
  return run;
}

}  // namespace isoscope
