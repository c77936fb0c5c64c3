#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "isoscope/experiments.hpp"
#include "isoscope/isotropy.hpp"
#include "isoscope/mlp.hpp"

namespace isoscope {

namespace fs = std::filesystem;

enum class MatrixFormat { Csv, Binary };

/// Magic prefix of the binary matrix format, followed by little-endian
/// u64 rows, u64 cols and rows*cols f64 values in row-major order.
inline constexpr char kBinaryMagic[4] = {'I', 'S', 'M', '1'};

/// Auto-detects binary (magic bytes) versus CSV text.
PointCloud read_matrix(const fs::path& path);
void write_matrix(const fs::path& path, const PointCloud& X, MatrixFormat format);
MatrixFormat format_for_path(const fs::path& path);

PointCloud parse_csv_matrix(const std::string& text);
std::string format_csv_matrix(const PointCloud& X);
PointCloud decode_binary_matrix(const std::string& bytes);
std::string encode_binary_matrix(const PointCloud& X);

/// CSV whose last column is an integer class label.
LabeledData read_labeled_csv(const fs::path& path);
void write_labeled_csv(const fs::path& path, const LabeledData& data);

std::string read_file(const fs::path& path);
/// Writes to a sibling temp file then renames over `path`.
void atomic_write(const fs::path& path, const std::string& content);

std::string format_double(double v);

std::string isoreport_csv(const IsoReport& report);
/// Summary table: one row per grid cell, mean and std per metric.
std::string experiment_csv(const ExperimentResult& result);
/// One row per (cell, seed).
std::string experiment_runs_csv(const ExperimentResult& result);

struct SvgSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool lines = true;
};

struct SvgChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<SvgSeries> series;
  std::vector<double> reference_lines;  // horizontal dashed lines

  std::string render() const;
};

/// Chart appropriate for the experiment kind; nullopt when none applies.
std::optional<SvgChart> chart_for(const ExperimentResult& result);

struct ManifestEntry {
  std::string file;
  std::string hash;  // git blob hash
};

struct RunManifest {
  nlohmann::json config;
  std::vector<std::uint64_t> seeds;
  std::string tool_version;
  std::vector<ManifestEntry> outputs;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

inline constexpr const char* kManifestName = "manifest.json";

std::string tool_version();

/// Writes files into out_dir atomically, then the manifest listing them.
RunManifest emit_files(const fs::path& out_dir, const std::vector<std::pair<std::string, std::string>>& files,
                       const nlohmann::json& config, const std::vector<std::uint64_t>& seeds);

RunManifest emit_report(const ExperimentResult& result, const fs::path& out_dir);
RunManifest emit_report(const IsoReport& report, const fs::path& out_dir, const nlohmann::json& config);

/// Re-hashes every output listed in out_dir's manifest; throws HashMismatch
/// naming the first file whose content changed.
void verify_manifest(const fs::path& out_dir);

}  // namespace isoscope
