#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "isoscope/mlp.hpp"

namespace isoscope {

struct MetricStat {
  double mean = 0;
  double std = 0;  // NaN with fewer than two seeds
  std::size_t n = 0;
};

MetricStat summarize(const std::vector<double>& values);

/// One parameter combination of a sweep, with one value per seed for every
/// metric of the owning result.
struct GridCell {
  std::vector<std::string> params;          // aligned with ExperimentResult::param_names
  std::vector<std::vector<double>> values;  // [metric][seed]
  std::string config_hash;

  MetricStat stat(std::size_t metric) const { return summarize(values.at(metric)); }
};

struct ExperimentResult {
  std::string experiment_id;
  std::vector<std::string> param_names;
  std::vector<std::string> metric_names;
  std::vector<std::uint64_t> seeds;
  std::vector<GridCell> cells;
  nlohmann::json config;
  std::string config_hash;
  nlohmann::json notes = nlohmann::json::object();

  std::size_t metric_index(const std::string& name) const;
  /// Cell whose parameter values equal `params`; throws if absent.
  const GridCell& cell(const std::vector<std::string>& params) const;
  /// Throws ConfigError if any cell carries a different config hash.
  void check_hashes() const;
};

/// Canonical text for a parameter value (shortest round-trip decimal).
std::string format_number(double v);

/// Hex SHA-1 of the canonical JSON text.
std::string config_hash(const nlohmann::json& config);

/// Number of worker threads: ISOSCOPE_THREADS if set, else hardware concurrency.
unsigned worker_threads();

/// Runs fn(0..n-1) on up to worker_threads() threads; fn must only touch
/// its own output slot. Rethrows the first exception.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// ---------------------------------------------------------------------------
// Mini-batch stability of IsoScore* under shrinkage.

struct StabilityConfig {
  Eigen::Index dim = 64;
  Vector spectrum;  // population variances; empty -> (10, 6, 4, 4, 1, ..., 1)
  std::vector<Eigen::Index> batch_sizes = {16, 32, 48, 64, 128, 256};
  std::vector<double> zetas = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  Eigen::Index reference_size = 6000;  // |S|
  Eigen::Index pool_size = 20000;      // |X bar|; S and every batch are disjoint slices
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};

  static StabilityConfig desk();
  static StabilityConfig full();
  nlohmann::json to_json() const;
};

/// (10, 6, 4, 4, 1, ..., 1) of length d.
Vector default_stability_spectrum(Eigen::Index d);

/// IsoScore* of the exact population covariance diag(spectrum).
double population_isoscore(const Vector& spectrum);

ExperimentResult stability_sweep(const StabilityConfig& config);

// ---------------------------------------------------------------------------
// Training sweeps on a synthetic classification task.

struct BlobsSpec {
  int classes = 4;
  Eigen::Index dim = 16;
  Eigen::Index points_per_class = 1000;
  double spread = 3.0;
  std::uint64_t seed = 1;

  LabeledData make() const;
  nlohmann::json to_json() const;
};

struct TaskConfig {
  BlobsSpec data;
  TrainConfig train;  // template; regularizer, lambda, zeta, seed are overridden per cell

  nlohmann::json to_json() const;
};

ExperimentResult zeta_sweep(const TaskConfig& task, double lambda, const std::vector<double>& zetas,
                            const std::vector<std::uint64_t>& seeds);

ExperimentResult lambda_sweep(const TaskConfig& task, const std::vector<double>& lambdas,
                              const std::vector<std::uint64_t>& seeds);

/// Cells: "-1", "1" (CosReg with that lambda) and "none" (no regularizer).
ExperimentResult cosreg_mean_experiment(const TaskConfig& task, const std::vector<std::uint64_t>& seeds);

/// IsoScore* of each hidden layer on `data`, each layer shrunk toward its
/// own target covariance.
std::vector<double> layer_profile(const MlpModel& model, const PointCloud& data, double zeta,
                                  const std::vector<CovMatrix>& sigma_s);

/// Per-layer shrinkage targets from a forward pass over `sample`.
std::vector<CovMatrix> layer_shrinkage_targets(const MlpModel& model, const PointCloud& sample);

/// Layer-wise IsoScore* after global I-STAR training with each lambda
/// (plus an unregularized "none" cell).
ExperimentResult layer_isotropy_experiment(const TaskConfig& task, const std::vector<double>& lambdas, double zeta,
                                           const std::vector<std::uint64_t>& seeds);

/// Validation accuracy when I-STAR is applied to one hidden layer at a time
/// versus globally.
ExperimentResult layer_scope_experiment(const TaskConfig& task, double lambda, const std::vector<std::uint64_t>& seeds);

/// TwoNN ID of final-layer validation activations per lambda ("none" = no regularizer).
ExperimentResult id_vs_lambda(const TaskConfig& task, const std::vector<double>& lambdas,
                              const std::vector<std::uint64_t>& seeds);

/// Spearman rank correlation (average ranks for ties).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

TaskConfig default_task();

}  // namespace isoscope
