#include "isoscope/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "isoscope/hash.hpp"
#include "isoscope/isotropy.hpp"

namespace isoscope {

using nlohmann::json;

MetricStat summarize(const std::vector<double>& values) {
  MetricStat s;
  s.n = values.size();
  if (values.empty()) {
    s.mean = s.std = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
  if (values.size() < 2) {
    s.std = std::numeric_limits<double>::quiet_NaN();
  } else {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / double(values.size() - 1));
  }
  return s;
}

std::size_t ExperimentResult::metric_index(const std::string& name) const {
  const auto it = std::find(metric_names.begin(), metric_names.end(), name);
  if (it == metric_names.end()) throw Error(ErrorCode::InvalidArgument, "no metric '" + name + "' in " + experiment_id);
  return static_cast<std::size_t>(it - metric_names.begin());
}

const GridCell& ExperimentResult::cell(const std::vector<std::string>& params) const {
  for (const auto& c : cells)
    if (c.params == params) return c;
  std::string key;
  for (const auto& p : params) key += p + " ";
  throw Error(ErrorCode::InvalidArgument, "no cell [" + key + "] in " + experiment_id);
}

void ExperimentResult::check_hashes() const {
  for (const auto& c : cells) {
    if (c.config_hash != config_hash) {
      throw Error(ErrorCode::ConfigError, "cell config hash " + c.config_hash + " differs from " + config_hash);
    }
  }
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string config_hash(const json& config) { return sha1_hex(config.dump()); }

unsigned worker_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("ISOSCOPE_THREADS")) {
    unsigned parsed = 0;
    const std::string_view s(env);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), parsed);
    if (ec == std::errc() && ptr == s.data() + s.size() && parsed > 0) n = parsed;
  }
  return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const auto threads = std::min<std::size_t>(worker_threads(), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

namespace {

json number_list(const auto& values) {
  json out = json::array();
  for (auto v : values) out.push_back(format_number(double(v)));
  return out;
}

json seed_list(const std::vector<std::uint64_t>& seeds) {
  json out = json::array();
  for (auto s : seeds) out.push_back(std::to_string(s));
  return out;
}

void finalize(ExperimentResult& r) {
  r.config_hash = config_hash(r.config);
  for (auto& c : r.cells) c.config_hash = r.config_hash;
  r.check_hashes();
}

}  // namespace

// ---------------------------------------------------------------------------

Vector default_stability_spectrum(Eigen::Index d) {
  if (d < 4) throw Error(ErrorCode::DimensionTooSmall, "default spectrum needs d >= 4");
  Vector s = Vector::Ones(d);
  s.head(4) << 10.0, 6.0, 4.0, 4.0;
  return s;
}

double population_isoscore(const Vector& spectrum) {
  const CovMatrix pop(Matrix(spectrum.asDiagonal()), 1, Estimator::Population);
  return isoscore_star_cov(pop, 0.0, pop).score;
}

StabilityConfig StabilityConfig::desk() { return StabilityConfig{}; }

StabilityConfig StabilityConfig::full() {
  StabilityConfig c;
  c.dim = 768;
  c.batch_sizes = {64, 128, 256, 512, 700, 1024, 2048};
  c.zetas = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  c.reference_size = 75000;
  c.pool_size = 250000;
  c.seeds = {0};
  return c;
}

json StabilityConfig::to_json() const {
  const Vector spec = spectrum.size() ? spectrum : default_stability_spectrum(dim);
  return json{{"dim", std::to_string(dim)},
              {"spectrum", number_list(std::vector<double>(spec.data(), spec.data() + spec.size()))},
              {"batch_sizes", number_list(batch_sizes)},
              {"zetas", number_list(zetas)},
              {"reference_size", std::to_string(reference_size)},
              {"pool_size", std::to_string(pool_size)},
              {"seeds", seed_list(seeds)}};
}

ExperimentResult stability_sweep(const StabilityConfig& config) {
  const Vector spectrum = config.spectrum.size() ? config.spectrum : default_stability_spectrum(config.dim);
  if (spectrum.size() != config.dim) throw Error(ErrorCode::DimensionMismatch, "spectrum length differs from dim");
  if (config.seeds.empty()) throw Error(ErrorCode::ConfigError, "at least one seed is required");
  const Eigen::Index used =
      config.reference_size + std::accumulate(config.batch_sizes.begin(), config.batch_sizes.end(), Eigen::Index{0});
  if (used > config.pool_size) {
    throw Error(ErrorCode::ConfigError, "pool of " + std::to_string(config.pool_size) +
                                            " points cannot hold the reference sample and all batches disjointly");
  }
  if (config.reference_size < 2) throw Error(ErrorCode::ConfigError, "reference sample needs at least 2 points");

  ExperimentResult r;
  r.experiment_id = "stability";
  r.param_names = {"batch_size", "zeta"};
  r.metric_names = {"score", "abs_error"};
  r.seeds = config.seeds;
  r.config = config.to_json();
  const double truth = population_isoscore(spectrum);
  r.notes["true_score"] = format_number(truth);

  const std::size_t n_seeds = config.seeds.size();
  for (auto b : config.batch_sizes) {
    for (auto z : config.zetas) {
      GridCell c;
      c.params = {std::to_string(b), format_number(z)};
      c.values.assign(2, std::vector<double>(n_seeds, 0.0));
      r.cells.push_back(std::move(c));
    }
  }
  const Vector mean = Vector::Zero(config.dim);
  parallel_for(n_seeds, [&](std::size_t s) {
    const auto seed = config.seeds[s];
    const CovMatrix sigma_s = covariance(sample_gaussian_rows(mean, spectrum, 0, config.reference_size, seed));
    auto offset = static_cast<std::uint64_t>(config.reference_size);
    for (std::size_t bi = 0; bi < config.batch_sizes.size(); ++bi) {
      const auto b = config.batch_sizes[bi];
      const PointCloud batch = sample_gaussian_rows(mean, spectrum, offset, b, seed);
      offset += static_cast<std::uint64_t>(b);
      const CovMatrix sigma_x = covariance(batch);
      for (std::size_t zi = 0; zi < config.zetas.size(); ++zi) {
        const double score = isoscore_star_cov(sigma_x, config.zetas[zi], sigma_s).score;
        auto& cell = r.cells[bi * config.zetas.size() + zi];
        cell.values[0][s] = score;
        cell.values[1][s] = std::abs(score - truth);
      }
    }
  });
  finalize(r);
  return r;
}

// ---------------------------------------------------------------------------

LabeledData BlobsSpec::make() const { return make_blobs(classes, dim, points_per_class, spread, seed); }

json BlobsSpec::to_json() const {
  return json{{"classes", std::to_string(classes)},
              {"dim", std::to_string(dim)},
              {"points_per_class", std::to_string(points_per_class)},
              {"spread", format_number(spread)},
              {"seed", std::to_string(seed)}};
}

json TaskConfig::to_json() const {
  const auto& t = train;
  return json{{"data", data.to_json()},
              {"train",
               {{"lambda", format_number(t.lambda)},
                {"zeta", format_number(t.zeta)},
                {"regularizer", to_string(t.regularizer)},
                {"layer_scope", t.layer_scope.str()},
                {"epochs", std::to_string(t.epochs)},
                {"batch_size", std::to_string(t.batch_size)},
                {"learning_rate", format_number(t.learning_rate)},
                {"seed", std::to_string(t.seed)},
                {"shrinkage_sample_size", std::to_string(t.shrinkage_sample_size)},
                {"hidden", number_list(t.hidden)},
                {"activation", to_string(t.activation)},
                {"validation_fraction", format_number(t.validation_fraction)}}}};
}

TaskConfig default_task() { return TaskConfig{}; }

namespace {

struct CellSpec {
  std::vector<std::string> params;
  TrainConfig config;
};

using Extractor = std::function<std::vector<double>(const TrainRun&, const TrainConfig&)>;

void run_training_grid(ExperimentResult& r, const TaskConfig& task, const std::vector<CellSpec>& specs,
                       const std::vector<std::uint64_t>& seeds, const Extractor& extract) {
  if (seeds.empty()) throw Error(ErrorCode::ConfigError, "at least one seed is required");
  const LabeledData data = task.data.make();
  r.seeds = seeds;
  const std::size_t n_metrics = r.metric_names.size();
  for (const auto& spec : specs) {
    GridCell c;
    c.params = spec.params;
    c.values.assign(n_metrics, std::vector<double>(seeds.size(), 0.0));
    r.cells.push_back(std::move(c));
  }
  parallel_for(specs.size() * seeds.size(), [&](std::size_t job) {
    const std::size_t ci = job / seeds.size();
    const std::size_t si = job % seeds.size();
    TrainConfig cfg = specs[ci].config;
    cfg.seed = seeds[si];
    const TrainRun run = train(cfg, data);
    const auto metrics = extract(run, cfg);
    for (std::size_t m = 0; m < n_metrics; ++m) r.cells[ci].values[m][si] = metrics.at(m);
  });
  json grid = json::array();
  for (const auto& spec : specs) grid.push_back(spec.params);
  r.config["task"] = task.to_json();
  r.config["grid"] = grid;
  r.config["seeds"] = seed_list(seeds);
  finalize(r);
}

TrainConfig with(const TrainConfig& base, Regularizer reg, double lambda) {
  TrainConfig c = base;
  c.regularizer = reg;
  c.lambda = lambda;
  if (reg == Regularizer::None) c.lambda = 0.0;
  return c;
}

}  // namespace

ExperimentResult zeta_sweep(const TaskConfig& task, double lambda, const std::vector<double>& zetas,
                            const std::vector<std::uint64_t>& seeds) {
  ExperimentResult r;
  r.experiment_id = "zeta_sweep";
  r.param_names = {"zeta"};
  r.metric_names = {"val_accuracy", "val_isoscore"};
  std::vector<CellSpec> specs;
  for (double z : zetas) {
    TrainConfig c = with(task.train, Regularizer::IStar, lambda);
    c.zeta = z;
    specs.push_back({{format_number(z)}, c});
  }
  r.config["lambda"] = format_number(lambda);
  run_training_grid(r, task, specs, seeds, [](const TrainRun& run, const TrainConfig&) {
    return std::vector<double>{run.report.final().val_accuracy, run.report.final().val_isoscore};
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.cells.size(); ++i)
    if (r.cells[i].stat(0).mean > r.cells[best].stat(0).mean) best = i;
  if (!r.cells.empty()) r.notes["best_zeta"] = r.cells[best].params[0];
  return r;
}

ExperimentResult lambda_sweep(const TaskConfig& task, const std::vector<double>& lambdas,
                              const std::vector<std::uint64_t>& seeds) {
  ExperimentResult r;
  r.experiment_id = "lambda_sweep";
  r.param_names = {"lambda"};
  r.metric_names = {"val_accuracy", "val_isoscore", "val_twonn_id"};
  std::vector<CellSpec> specs;
  for (double l : lambdas) specs.push_back({{format_number(l)}, with(task.train, Regularizer::IStar, l)});
  run_training_grid(r, task, specs, seeds, [](const TrainRun& run, const TrainConfig&) {
    const auto& f = run.report.final();
    return std::vector<double>{f.val_accuracy, f.val_isoscore, f.val_twonn_id};
  });
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    xs.push_back(lambdas[i]);
    ys.push_back(r.cells[i].stat(1).mean);
  }
  if (xs.size() >= 2) r.notes["spearman_lambda_isoscore"] = format_number(spearman(xs, ys));
  return r;
}

ExperimentResult cosreg_mean_experiment(const TaskConfig& task, const std::vector<std::uint64_t>& seeds) {
  ExperimentResult r;
  r.experiment_id = "cosreg_mean";
  r.param_names = {"lambda"};
  const auto width = task.train.hidden.back();
  r.metric_names = {"mean_norm", "final_isoscore", "val_accuracy"};
  for (Eigen::Index j = 0; j < width; ++j) r.metric_names.push_back("mean_dim_" + std::to_string(j));
  std::vector<CellSpec> specs = {{{"-1"}, with(task.train, Regularizer::CosReg, -1.0)},
                                 {{"1"}, with(task.train, Regularizer::CosReg, 1.0)},
                                 {{"none"}, with(task.train, Regularizer::None, 0.0)}};
  run_training_grid(r, task, specs, seeds, [](const TrainRun& run, const TrainConfig&) {
    const auto pass = forward_capture(run.model, run.validation.points);
    const Matrix& last = pass.activations.back();
    const Eigen::RowVectorXd mean = last.colwise().mean();
    std::vector<double> out = {mean.norm(), run.report.final().layer_isoscores.back(), run.report.final().val_accuracy};
    for (Eigen::Index j = 0; j < mean.size(); ++j) out.push_back(mean(j));
    return out;
  });
  return r;
}

std::vector<CovMatrix> layer_shrinkage_targets(const MlpModel& model, const PointCloud& sample) {
  const auto pass = forward_capture(model, sample);
  std::vector<CovMatrix> out;
  for (const auto& a : pass.activations) out.push_back(covariance(a));
  return out;
}

std::vector<double> layer_profile(const MlpModel& model, const PointCloud& data, double zeta,
                                  const std::vector<CovMatrix>& sigma_s) {
  const auto pass = forward_capture(model, data);
  if (sigma_s.size() != pass.activations.size()) {
    throw Error(ErrorCode::DimensionMismatch, "need one shrinkage target per hidden layer");
  }
  std::vector<double> out;
  for (std::size_t l = 0; l < pass.activations.size(); ++l) {
    out.push_back(isoscore_star(pass.activations[l], zeta, sigma_s[l]).score);
  }
  return out;
}

namespace {

PointCloud training_subsample(const TaskConfig& task, const TrainConfig& cfg) {
  const auto split = split_dataset(task.data.make(), cfg.validation_fraction, cfg.seed);
  const auto take = std::min<Eigen::Index>(cfg.shrinkage_sample_size, split.first.size());
  return split.first.points.topRows(take);
}

}  // namespace

ExperimentResult layer_isotropy_experiment(const TaskConfig& task, const std::vector<double>& lambdas, double zeta,
                                           const std::vector<std::uint64_t>& seeds) {
  ExperimentResult r;
  r.experiment_id = "layer_isotropy";
  r.param_names = {"lambda"};
  for (std::size_t l = 0; l < task.train.hidden.size(); ++l) r.metric_names.push_back("layer_" + std::to_string(l));
  r.metric_names.push_back("val_accuracy");
  std::vector<CellSpec> specs;
  for (double l : lambdas) specs.push_back({{format_number(l)}, with(task.train, Regularizer::IStar, l)});
  specs.push_back({{"none"}, with(task.train, Regularizer::None, 0.0)});
  r.config["profile_zeta"] = format_number(zeta);
  run_training_grid(r, task, specs, seeds, [&](const TrainRun& run, const TrainConfig& cfg) {
    const auto targets = layer_shrinkage_targets(run.model, training_subsample(task, cfg));
    auto out = layer_profile(run.model, run.validation.points, zeta, targets);
    out.push_back(run.report.final().val_accuracy);
    return out;
  });
  return r;
}

ExperimentResult layer_scope_experiment(const TaskConfig& task, double lambda, const std::vector<std::uint64_t>& seeds) {
  ExperimentResult r;
  r.experiment_id = "layer_scope";
  r.param_names = {"scope"};
  r.metric_names = {"val_accuracy", "val_isoscore"};
  std::vector<CellSpec> specs;
  TrainConfig g = with(task.train, Regularizer::IStar, lambda);
  g.layer_scope = LayerScope::global();
  specs.push_back({{g.layer_scope.str()}, g});
  for (std::size_t l = 0; l < task.train.hidden.size(); ++l) {
    TrainConfig c = g;
    c.layer_scope = LayerScope::single(l);
    specs.push_back({{c.layer_scope.str()}, c});
  }
  r.config["lambda"] = format_number(lambda);
  run_training_grid(r, task, specs, seeds, [](const TrainRun& run, const TrainConfig&) {
    return std::vector<double>{run.report.final().val_accuracy, run.report.final().val_isoscore};
  });
  return r;
}

ExperimentResult id_vs_lambda(const TaskConfig& task, const std::vector<double>& lambdas,
                              const std::vector<std::uint64_t>& seeds) {
  ExperimentResult r;
  r.experiment_id = "id_vs_lambda";
  r.param_names = {"lambda"};
  r.metric_names = {"val_twonn_id", "val_isoscore"};
  std::vector<CellSpec> specs;
  for (double l : lambdas) specs.push_back({{format_number(l)}, with(task.train, Regularizer::IStar, l)});
  specs.push_back({{"none"}, with(task.train, Regularizer::None, 0.0)});
  run_training_grid(r, task, specs, seeds, [](const TrainRun& run, const TrainConfig&) {
    return std::vector<double>{run.report.final().val_twonn_id, run.report.final().val_isoscore};
  });
  return r;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::InvalidArgument, "spearman needs paired samples");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = double(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace isoscope
