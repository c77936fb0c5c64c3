#include "isoscope/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <iostream>
#include <sstream>

#include "isoscope/io.hpp"
#include "isoscope/isostar_grad.hpp"
#include "isoscope/twonn.hpp"

namespace isoscope {

using nlohmann::json;

namespace {

void add_input(CLI::App* sub, CliCommand& cmd) {
  sub->add_option("--input,-i", cmd.input, "Matrix file (CSV or ISM1 binary)")->required();
}

void add_out_dir(CLI::App* sub, CliCommand& cmd, bool required = false) {
  auto* opt = sub->add_option("--out-dir,-o", cmd.out_dir, "Directory for reports and manifest");
  if (required) opt->required();
}

std::vector<std::uint64_t> default_seeds() { return {0, 1, 2, 3, 4}; }

}  // namespace

CliCommand parse_cli(int argc, const char* const* argv) {
  CliCommand cmd;
  CLI::App app{"Isotropy measurement and regularization toolkit", "isoscope"};
  app.require_subcommand(1, 1);

  auto* isoscore = app.add_subcommand("isoscore", "IsoScore of a point cloud");
  add_input(isoscore, cmd);
  add_out_dir(isoscore, cmd);

  auto* isostar = app.add_subcommand("isostar", "IsoScore* with RDA shrinkage");
  add_input(isostar, cmd);
  isostar->add_option("--zeta", cmd.zeta, "Shrinkage weight on the reference covariance")->check(CLI::Range(0.0, 1.0));
  isostar->add_option("--sigma-s", cmd.sigma_s, "Shrinkage covariance matrix file");
  isostar->add_option("--estimator", cmd.estimator)->check(CLI::IsMember({"unbiased", "population"}));
  add_out_dir(isostar, cmd);

  auto* cosine = app.add_subcommand("cosine", "Average random cosine similarity");
  add_input(cosine, cmd);
  cosine->add_option("--pairs", cmd.pairs)->check(CLI::PositiveNumber);
  cosine->add_option("--seed", cmd.seed);

  auto* partition = app.add_subcommand("partition", "Partition-function isotropy score");
  add_input(partition, cmd);

  auto* twonn = app.add_subcommand("twonn", "TwoNN intrinsic dimension");
  add_input(twonn, cmd);
  twonn->add_option("--discard", cmd.discard, "Fraction of largest neighbor ratios censored")
      ->check(CLI::Range(0.0, 0.99));

  auto* grad = app.add_subcommand("grad-check", "Analytic vs finite-difference IsoScore* gradient");
  add_input(grad, cmd);
  grad->add_option("--zeta", cmd.zeta)->check(CLI::Range(0.0, 1.0));
  grad->add_option("--sigma-s", cmd.sigma_s);
  grad->add_option("--step", cmd.step, "Central-difference step h")->check(CLI::PositiveNumber);
  grad->add_option("--tolerance", cmd.tolerance)->check(CLI::PositiveNumber);

  auto* blobs = app.add_subcommand("make-blobs", "Write a labeled Gaussian-blob dataset");
  blobs->add_option("--output", cmd.output)->required();
  blobs->add_option("--classes", cmd.classes)->check(CLI::Range(2, 1000));
  blobs->add_option("--d", cmd.dim)->check(CLI::Range(std::int64_t{1}, std::int64_t{100000}));
  blobs->add_option("--per-class", cmd.per_class)->check(CLI::PositiveNumber);
  blobs->add_option("--spread", cmd.spread)->check(CLI::NonNegativeNumber);
  blobs->add_option("--seed", cmd.seed);

  auto* train = app.add_subcommand("train", "Train the MLP with an optional isotropy regularizer");
  train->add_option("--config", cmd.config, "Task configuration JSON")->required();
  train->add_option("--data", cmd.data, "Labeled CSV; blobs from the config when omitted");
  add_out_dir(train, cmd, true);

  auto* experiment = app.add_subcommand("experiment", "Run a scripted experiment");
  experiment->add_option("--name", cmd.experiment)->required()->check(CLI::IsMember(kExperimentNames));
  experiment->add_option("--config", cmd.config, "Task configuration JSON for training experiments");
  experiment->add_option("--seeds", cmd.seeds)->delimiter(',');
  add_out_dir(experiment, cmd, true);

  auto* verify = app.add_subcommand("verify", "Check output hashes against the run manifest");
  add_out_dir(verify, cmd, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    cmd.help_text = app.help();
    return cmd;
  } catch (const CLI::ExtrasError& e) {
    throw Error(ErrorCode::UnknownFlag, e.what());
  } catch (const CLI::RequiredError& e) {
    throw Error(ErrorCode::MissingInput, e.what());
  } catch (const CLI::ParseError& e) {
    throw Error(ErrorCode::InvalidArgument, e.what());
  }
  for (auto* sub : app.get_subcommands()) cmd.subcommand = sub->get_name();
  if (cmd.subcommand == "isostar" && cmd.zeta > 0.0 && cmd.sigma_s.empty()) {
    throw Error(ErrorCode::MissingInput, "--sigma-s is required when --zeta > 0");
  }
  if (cmd.subcommand == "grad-check" && cmd.zeta > 0.0 && cmd.sigma_s.empty()) {
    throw Error(ErrorCode::MissingInput, "--sigma-s is required when --zeta > 0");
  }
  if (cmd.seeds.empty()) cmd.seeds = default_seeds();
  return cmd;
}

namespace {

double json_number(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    double out = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec == std::errc() && ptr == s.data() + s.size()) return out;
  }
  throw Error(ErrorCode::ConfigError, std::string("config field '") + key + "' is not a decimal number");
}

std::string json_string(const json& j, const char* key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw Error(ErrorCode::ConfigError, std::string("config field '") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

LayerScope scope_from_string(const std::string& s) {
  if (s == "global") return LayerScope::global();
  if (s.rfind("single:", 0) == 0) {
    std::size_t idx = 0;
    const auto tail = s.substr(7);
    auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), idx);
    if (ec == std::errc() && ptr == tail.data() + tail.size()) return LayerScope::single(idx);
  }
  throw Error(ErrorCode::ConfigError, "layer_scope must be 'global' or 'single:<index>'");
}

CovMatrix load_sigma_s(const CliCommand& cmd, Eigen::Index d) {
  if (cmd.sigma_s.empty()) return CovMatrix::identity(d);
  const PointCloud m = read_matrix(cmd.sigma_s);
  if (m.rows() != d || m.cols() != d) {
    throw Error(ErrorCode::DimensionMismatch, "shrinkage matrix must be " + std::to_string(d) + "x" + std::to_string(d));
  }
  return CovMatrix(m);
}

json report_json(const IsoReport& r) {
  json spectrum = json::array();
  for (Eigen::Index i = 0; i < r.raw_spectrum.size(); ++i) spectrum.push_back(r.raw_spectrum.eigenvalues(i));
  return json{{"score", r.score}, {"defect", r.defect}, {"phi", r.phi}, {"zeta", r.zeta},
              {"used_shrinkage", r.used_shrinkage}, {"spectrum", spectrum}};
}

std::string train_report_csv(const TrainReport& report) {
  std::string out = "epoch,train_loss,val_accuracy,val_isoscore,val_twonn_id,final_mean_norm,jitter_count";
  const auto layers = report.epochs.empty() ? 0 : report.epochs.front().layer_isoscores.size();
  for (std::size_t l = 0; l < layers; ++l) out += ",layer_" + std::to_string(l) + "_isoscore";
  out += '\n';
  for (const auto& e : report.epochs) {
    out += std::to_string(e.epoch) + ',' + format_double(e.train_loss) + ',' + format_double(e.val_accuracy) + ',' +
           format_double(e.val_isoscore) + ',' + format_double(e.val_twonn_id) + ',' + format_double(e.final_mean_norm) +
           ',' + std::to_string(e.jitter_count);
    for (double v : e.layer_isoscores) out += ',' + format_double(v);
    out += '\n';
  }
  return out;
}

TaskConfig load_task(const CliCommand& cmd) {
  if (cmd.config.empty()) return default_task();
  try {
    return task_config_from_json(json::parse(read_file(cmd.config)));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
}

}  // namespace

TaskConfig task_config_from_json(const json& j) {
  TaskConfig task;
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
  if (j.contains("data")) {
    const auto& d = j.at("data");
    task.data.classes = static_cast<int>(json_number(d, "classes", task.data.classes));
    task.data.dim = static_cast<Eigen::Index>(json_number(d, "dim", double(task.data.dim)));
    task.data.points_per_class = static_cast<Eigen::Index>(json_number(d, "points_per_class", double(task.data.points_per_class)));
    task.data.spread = json_number(d, "spread", task.data.spread);
    task.data.seed = static_cast<std::uint64_t>(json_number(d, "seed", double(task.data.seed)));
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    auto& c = task.train;
    c.lambda = json_number(t, "lambda", c.lambda);
    c.zeta = json_number(t, "zeta", c.zeta);
    c.regularizer = regularizer_from_string(json_string(t, "regularizer", to_string(c.regularizer)));
    c.layer_scope = scope_from_string(json_string(t, "layer_scope", c.layer_scope.str()));
    c.epochs = static_cast<int>(json_number(t, "epochs", c.epochs));
    c.batch_size = static_cast<int>(json_number(t, "batch_size", c.batch_size));
    c.learning_rate = json_number(t, "learning_rate", c.learning_rate);
    c.seed = static_cast<std::uint64_t>(json_number(t, "seed", double(c.seed)));
    c.shrinkage_sample_size = static_cast<int>(json_number(t, "shrinkage_sample_size", c.shrinkage_sample_size));
    c.activation = activation_from_string(json_string(t, "activation", to_string(c.activation)));
    c.validation_fraction = json_number(t, "validation_fraction", c.validation_fraction);
    if (t.contains("hidden")) {
      c.hidden.clear();
      for (const auto& w : t.at("hidden")) {
        json wrap = {{"w", w}};
        c.hidden.push_back(static_cast<Eigen::Index>(json_number(wrap, "w", 0)));
      }
    }
  }
  task.train.validate();
  return task;
}

int run_command(const CliCommand& cmd, std::ostream& out, std::ostream& err) {
  if (!cmd.help_text.empty()) {
    out << cmd.help_text;
    return 0;
  }
  const auto& sub = cmd.subcommand;
  const Estimator estimator = cmd.estimator == "population" ? Estimator::Population : Estimator::Unbiased;

  if (sub == "isoscore" || sub == "isostar") {
    const PointCloud X = read_matrix(cmd.input);
    IsoReport report;
    json config = {{"subcommand", sub}, {"input", cmd.input.string()}};
    if (sub == "isoscore") {
      report = isoscore(X, estimator);
    } else {
      report = isoscore_star(X, cmd.zeta, load_sigma_s(cmd, X.cols()), estimator);
      config["zeta"] = format_double(cmd.zeta);
      config["sigma_s"] = cmd.sigma_s.string();
    }
    out << report_json(report).dump() << '\n';
    if (!cmd.out_dir.empty()) emit_report(report, cmd.out_dir, config);
    return 0;
  }
  if (sub == "cosine") {
    const auto s = avg_random_cosine(read_matrix(cmd.input), cmd.pairs, cmd.seed);
    out << json{{"avg_random_cosine", s.value}, {"pair_count", s.pair_count}, {"seed", s.seed}}.dump() << '\n';
    return 0;
  }
  if (sub == "partition") {
    const auto s = partition_isotropy(read_matrix(cmd.input));
    out << json{{"partition_isotropy", s.value}}.dump() << '\n';
    return 0;
  }
  if (sub == "twonn") {
    const auto est = twonn_id(read_matrix(cmd.input), cmd.discard);
    out << json{{"id", est.id_value}, {"n_used", est.n_used}, {"discard_fraction", est.discard_fraction}}.dump() << '\n';
    return 0;
  }
  if (sub == "grad-check") {
    const PointCloud X = read_matrix(cmd.input);
    const CovMatrix sigma_s = load_sigma_s(cmd, X.cols());
    const auto analytic = grad_isoscore_star(X, cmd.zeta, sigma_s);
    const auto numeric = finite_diff_grad(X, cmd.zeta, sigma_s, cmd.step);
    const double rel = max_relative_error(analytic.values, numeric.values);
    const bool ok = rel < cmd.tolerance;
    out << json{{"max_relative_error", rel}, {"tolerance", cmd.tolerance}, {"pass", ok}}.dump() << '\n';
    return ok ? 0 : exit_code_of(ErrorCategory::Numerical);
  }
  if (sub == "make-blobs") {
    write_labeled_csv(cmd.output, make_blobs(cmd.classes, cmd.dim, cmd.per_class, cmd.spread, cmd.seed));
    return 0;
  }
  if (sub == "train") {
    const TaskConfig task = load_task(cmd);
    const LabeledData data = cmd.data.empty() ? task.data.make() : read_labeled_csv(cmd.data);
    const TrainRun run = train(task.train, data);
    json config = task.to_json();
    if (!cmd.data.empty()) config["data_file"] = cmd.data.string();
    emit_files(cmd.out_dir, {{"train_report.csv", train_report_csv(run.report)}}, config, {task.train.seed});
    const auto& f = run.report.final();
    out << json{{"val_accuracy", f.val_accuracy}, {"val_isoscore", f.val_isoscore}, {"val_twonn_id", f.val_twonn_id},
                {"final_mean_norm", f.final_mean_norm}}
               .dump()
        << '\n';
    return 0;
  }
  if (sub == "experiment") {
    ExperimentResult result;
    const auto& name = cmd.experiment;
    if (name == "stability" || name == "stability-full") {
      StabilityConfig sc = name == "stability" ? StabilityConfig::desk() : StabilityConfig::full();
      sc.seeds = cmd.seeds;
      result = stability_sweep(sc);
    } else {
      const TaskConfig task = load_task(cmd);
      if (name == "zeta") {
        result = zeta_sweep(task, task.train.lambda != 0.0 ? task.train.lambda : -1.0, {0.0, 0.2, 0.4, 0.6, 0.8, 1.0},
                            cmd.seeds);
      } else if (name == "lambda") {
        result = lambda_sweep(task, {-5, -3, -1, 0.5, 1, 3, 5}, cmd.seeds);
      } else if (name == "cosreg-mean") {
        result = cosreg_mean_experiment(task, cmd.seeds);
      } else if (name == "layer-isotropy") {
        result = layer_isotropy_experiment(task, {-1, 1}, 0.75, cmd.seeds);
      } else if (name == "layer-scope") {
        result = layer_scope_experiment(task, task.train.lambda != 0.0 ? task.train.lambda : -1.0, cmd.seeds);
      } else {
        result = id_vs_lambda(task, {-5, -3, 3, 5}, cmd.seeds);
      }
    }
    const auto manifest = emit_report(result, cmd.out_dir);
    for (const auto& e : manifest.outputs) out << (cmd.out_dir / e.file).string() << '\n';
    return 0;
  }
  if (sub == "verify") {
    verify_manifest(cmd.out_dir);
    out << "ok\n";
    return 0;
  }
  err << "unhandled subcommand " << sub << '\n';
  return 2;
}

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  try {
    return run_command(parse_cli(argc, argv), out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_of(ErrorCategory::Data);
  }
}

}  // namespace isoscope
