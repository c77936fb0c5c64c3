#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "isoscope/experiments.hpp"
#include "isoscope/io.hpp"

using namespace isoscope;

namespace {

const std::vector<std::uint64_t> kSeeds = {0, 1, 2, 3, 4};

TaskConfig small_task() {
  TaskConfig t = default_task();
  t.data.points_per_class = 300;
  t.train.epochs = 3;
  return t;
}

int count_seeds(const GridCell& a, const GridCell& b, std::size_t metric, bool a_greater) {
  int n = 0;
  for (std::size_t s = 0; s < a.values[metric].size(); ++s) {
    n += a_greater ? (a.values[metric][s] > b.values[metric][s]) : (a.values[metric][s] < b.values[metric][s]);
  }
  return n;
}

}  // namespace

TEST(Summary, MeanStd) {
  const auto s = summarize({1.0, 2.0, 3.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.std, 1.0);
  EXPECT_EQ(s.n, 3u);
  EXPECT_TRUE(std::isnan(summarize({4.0}).std));
}

TEST(Summary, FormatNumberRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-17, 123456789.0, 0.8673388879251979}) {
    EXPECT_EQ(std::stod(format_number(v)), v);
  }
  EXPECT_EQ(format_number(0.5), "0.5");
  EXPECT_EQ(format_number(-1), "-1");
}

TEST(Spearman, KnownValues) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3}, {1, 3, 2}), 0.5);
  // ties get average ranks: x ranks (1,2,3,4), y ranks (1.5,1.5,3,4)
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {5, 5, 6, 7}), 0.9486832980505138, 1e-12);
}

TEST(Experiment, HashMismatchIsError) {
  ExperimentResult r;
  r.cells.resize(2);
  r.config_hash = "abc";
  r.cells[0].config_hash = "abc";
  r.cells[1].config_hash = "abd";
  try {
    r.check_hashes();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
  r.cells[1].config_hash = "abc";
  EXPECT_NO_THROW(r.check_hashes());
}

TEST(Stability, DeskOrderingAndCompleteness) {
  const auto cfg = StabilityConfig::desk();
  const auto r = stability_sweep(cfg);
  EXPECT_EQ(r.cells.size(), cfg.batch_sizes.size() * cfg.zetas.size());
  for (const auto& c : r.cells) EXPECT_EQ(c.values[0].size(), cfg.seeds.size());
  const double truth = population_isoscore(default_stability_spectrum(64));
  EXPECT_EQ(r.notes.at("true_score").get<std::string>(), format_number(truth));
  const double s0 = r.cell({"48", "0"}).stat(0).mean;
  const double s6 = r.cell({"48", "0.6"}).stat(0).mean;
  EXPECT_LT(s0, s6);
  EXPECT_LE(s6, truth + 0.05);
  r.check_hashes();
}

TEST(Stability, ByteIdenticalAcrossRunsAndThreadCounts) {
  StabilityConfig cfg = StabilityConfig::desk();
  cfg.batch_sizes = {32, 64};
  cfg.seeds = {3, 4};
  const auto a = experiment_csv(stability_sweep(cfg));
  const auto b = experiment_csv(stability_sweep(cfg));
  EXPECT_EQ(a, b);
  ::setenv("ISOSCOPE_THREADS", "1", 1);
  const auto c = experiment_runs_csv(stability_sweep(cfg));
  ::unsetenv("ISOSCOPE_THREADS");
  EXPECT_EQ(c, experiment_runs_csv(stability_sweep(cfg)));
}

TEST(ZetaSweep, CompleteDeterministicAndShrinkageHelps) {
  const auto task = default_task();
  const std::vector<double> zetas = {0.0, 0.2, 0.4, 0.6, 0.8};
  const auto r = zeta_sweep(task, -1.0, zetas, {0, 1, 2});
  ASSERT_EQ(r.cells.size(), zetas.size());
  for (const auto& c : r.cells) EXPECT_EQ(c.values[0].size(), 3u);
  const auto acc = r.metric_index("val_accuracy");
  double best_interior = 0.0;
  for (const auto& c : r.cells)
    if (c.params[0] != "0") best_interior = std::max(best_interior, c.stat(acc).mean);
  EXPECT_GE(best_interior, r.cell({"0"}).stat(acc).mean);

  TaskConfig t = small_task();
  EXPECT_EQ(experiment_csv(zeta_sweep(t, -1.0, {0.0, 0.5}, {0, 1})), experiment_csv(zeta_sweep(t, -1.0, {0.0, 0.5}, {0, 1})));
}

TEST(LambdaSweep, DirectionAndRankCorrelation) {
  const std::vector<double> lambdas = {-5, -3, -1, 0.5, 1, 3, 5};
  const auto r = lambda_sweep(default_task(), lambdas, kSeeds);
  ASSERT_EQ(r.cells.size(), lambdas.size());
  const auto iso = r.metric_index("val_isoscore");
  EXPECT_GE(count_seeds(r.cell({"5"}), r.cell({"-5"}), iso, true), 4);
  EXPECT_GT(std::stod(r.notes.at("spearman_lambda_isoscore").get<std::string>()), 0.8);
}

TEST(CosRegMean, Directions) {
  const auto r = cosreg_mean_experiment(default_task(), kSeeds);
  ASSERT_EQ(r.cells.size(), 3u);
  const auto norm = r.metric_index("mean_norm");
  EXPECT_LT(r.cell({"1"}).stat(norm).mean, r.cell({"none"}).stat(norm).mean);
  EXPECT_GT(r.cell({"-1"}).stat(norm).mean, r.cell({"none"}).stat(norm).mean);
  EXPECT_LT(r.cell({"1"}).stat(r.metric_index("final_isoscore")).mean, 0.1);
  EXPECT_EQ(r.metric_names.size(), 3u + std::size_t(default_task().train.hidden.back()));
}

TEST(LayerIsotropy, EarlyLayersMoveMore) {
  const auto task = default_task();
  const auto r = layer_isotropy_experiment(task, {1.0}, 0.0, kSeeds);
  ASSERT_EQ(r.metric_names.size(), task.train.hidden.size() + 1);
  const auto& reg = r.cell({"1"});
  const auto& base = r.cell({"none"});
  const std::size_t first = 0, last = task.train.hidden.size() - 1;
  int wins = 0;
  for (std::size_t s = 0; s < kSeeds.size(); ++s) {
    const double early = reg.values[first][s] - base.values[first][s];
    const double late = reg.values[last][s] - base.values[last][s];
    wins += early > late;
  }
  EXPECT_GE(wins, 4);
}

TEST(LayerIsotropy, ProfileDeterministic) {
  const auto data = make_blobs(3, 8, 100, 2.0, 1);
  const MlpModel m = MlpModel::create(8, {16, 16, 16, 16}, 3, Activation::Tanh, 2);
  const auto targets = layer_shrinkage_targets(m, data.points);
  const auto a = layer_profile(m, data.points, 0.3, targets);
  EXPECT_EQ(a.size(), 4u);
  EXPECT_EQ(a, layer_profile(m, data.points, 0.3, targets));
}

TEST(LayerScope, OneCellPerScope) {
  const auto r = layer_scope_experiment(small_task(), -1.0, {0, 1});
  ASSERT_EQ(r.cells.size(), 4u);
  EXPECT_EQ(r.cells[0].params[0], "global");
  EXPECT_EQ(r.cells[3].params[0], "single:2");
}

TEST(IdVsLambda, Directions) {
  const auto r = id_vs_lambda(default_task(), {-5.0, 5.0}, kSeeds);
  ASSERT_EQ(r.cells.size(), 3u);
  const auto id = r.metric_index("val_twonn_id");
  EXPECT_GE(count_seeds(r.cell({"5"}), r.cell({"-5"}), id, true), 4);
  int between = 0;
  for (std::size_t s = 0; s < kSeeds.size(); ++s) {
    const double lo = r.cell({"-5"}).values[id][s], hi = r.cell({"5"}).values[id][s];
    const double b = r.cell({"none"}).values[id][s];
    between += (b > std::min(lo, hi) && b < std::max(lo, hi));
  }
  EXPECT_GE(between, 3);
}
