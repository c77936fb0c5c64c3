#include "isoscope/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "isoscope/hash.hpp"

namespace isoscope {

using nlohmann::json;

std::string format_double(double v) { return format_number(v); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void atomic_write(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "rename to " + path.string() + " failed: " + ec.message());
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_cell(std::string_view cell, std::size_t line) {
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw Error(ErrorCode::NonNumericCell, "line " + std::to_string(line) + ": '" + std::string(cell) + "'");
  }
  return v;
}

std::vector<std::vector<double>> parse_csv_rows(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      row.push_back(parse_cell(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start), line_no));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorCode::RaggedCsv, "line " + std::to_string(line_no) + " has " + std::to_string(row.size()) +
                                            " cells, expected " + std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::CorruptHeader, "no data rows");
  return rows;
}

}  // namespace

PointCloud parse_csv_matrix(const std::string& text) {
  const auto rows = parse_csv_rows(text);
  PointCloud X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) X(Eigen::Index(i), Eigen::Index(j)) = rows[i][j];
  return X;
}

std::string format_csv_matrix(const PointCloud& X) {
  std::string out;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      if (j) out += ',';
      out += format_double(X(i, j));
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary

namespace {

std::uint64_t load_u64_le(const char* p) {
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | static_cast<unsigned char>(p[b]);
  return v;
}

void store_u64_le(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

}  // namespace

PointCloud decode_binary_matrix(const std::string& bytes) {
  constexpr std::size_t header = 4 + 16;
  if (bytes.size() < header || std::memcmp(bytes.data(), kBinaryMagic, 4) != 0) {
    throw Error(ErrorCode::CorruptHeader, "missing ISM1 header");
  }
  const std::uint64_t n = load_u64_le(bytes.data() + 4);
  const std::uint64_t d = load_u64_le(bytes.data() + 12);
  if (d != 0 && n > (bytes.size() - header) / 8 / d) throw Error(ErrorCode::CorruptHeader, "payload shorter than header claims");
  if (bytes.size() != header + 8 * n * d) throw Error(ErrorCode::CorruptHeader, "payload size does not match header");
  PointCloud X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const char* p = bytes.data() + header;
  for (std::uint64_t i = 0; i < n; ++i) {
    for (std::uint64_t j = 0; j < d; ++j, p += 8) {
      X(Eigen::Index(i), Eigen::Index(j)) = std::bit_cast<double>(load_u64_le(p));
    }
  }
  return X;
}

std::string encode_binary_matrix(const PointCloud& X) {
  std::string out(kBinaryMagic, 4);
  out.reserve(20 + 8 * static_cast<std::size_t>(X.size()));
  store_u64_le(out, static_cast<std::uint64_t>(X.rows()));
  store_u64_le(out, static_cast<std::uint64_t>(X.cols()));
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X.cols(); ++j) store_u64_le(out, std::bit_cast<std::uint64_t>(X(i, j)));
  return out;
}

PointCloud read_matrix(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.empty()) throw Error(ErrorCode::CorruptHeader, path.string() + " is empty");
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kBinaryMagic, 4) == 0) return decode_binary_matrix(bytes);
  return parse_csv_matrix(bytes);
}

MatrixFormat format_for_path(const fs::path& path) {
  const auto ext = path.extension().string();
  return (ext == ".bin" || ext == ".ism") ? MatrixFormat::Binary : MatrixFormat::Csv;
}

void write_matrix(const fs::path& path, const PointCloud& X, MatrixFormat format) {
  atomic_write(path, format == MatrixFormat::Binary ? encode_binary_matrix(X) : format_csv_matrix(X));
}

LabeledData read_labeled_csv(const fs::path& path) {
  const std::string text = read_file(path);
  if (text.empty()) throw Error(ErrorCode::CorruptHeader, path.string() + " is empty");
  const auto rows = parse_csv_rows(text);
  if (rows.front().size() < 2) throw Error(ErrorCode::RaggedCsv, "labeled CSV needs features and a label column");
  LabeledData out;
  const auto d = static_cast<Eigen::Index>(rows.front().size() - 1);
  out.points.resize(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) out.points(Eigen::Index(i), j) = rows[i][std::size_t(j)];
    const double label = rows[i].back();
    if (label < 0 || label != std::floor(label)) {
      throw Error(ErrorCode::NonNumericCell, "label on row " + std::to_string(i + 1) + " is not a class index");
    }
    out.labels.push_back(static_cast<int>(label));
  }
  return out;
}

void write_labeled_csv(const fs::path& path, const LabeledData& data) {
  std::string out;
  for (Eigen::Index i = 0; i < data.points.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.points.cols(); ++j) out += format_double(data.points(i, j)) + ',';
    out += std::to_string(data.labels[std::size_t(i)]) + '\n';
  }
  atomic_write(path, out);
}

// ---------------------------------------------------------------------------
// Reports

std::string isoreport_csv(const IsoReport& r) {
  std::string out = "quantity,index,value\n";
  auto row = [&](const std::string& q, const std::string& idx, double v) { out += q + ',' + idx + ',' + format_double(v) + '\n'; };
  row("score", "", r.score);
  row("defect", "", r.defect);
  row("phi", "", r.phi);
  row("zeta", "", r.zeta);
  row("used_shrinkage", "", r.used_shrinkage ? 1.0 : 0.0);
  for (Eigen::Index i = 0; i < r.raw_spectrum.size(); ++i) row("eigenvalue", std::to_string(i), r.raw_spectrum.eigenvalues(i));
  for (Eigen::Index i = 0; i < r.normalized_spectrum.size(); ++i) row("normalized", std::to_string(i), r.normalized_spectrum(i));
  return out;
}

std::string experiment_csv(const ExperimentResult& r) {
  std::string out;
  for (const auto& p : r.param_names) out += p + ',';
  for (const auto& m : r.metric_names) out += m + "_mean," + m + "_std,";
  out += "n_seeds,config_hash\n";
  for (const auto& c : r.cells) {
    for (const auto& p : c.params) out += p + ',';
    for (std::size_t m = 0; m < r.metric_names.size(); ++m) {
      const auto s = c.stat(m);
      out += format_double(s.mean) + ',' + (s.n >= 2 ? format_double(s.std) : std::string()) + ',';
    }
    out += std::to_string(r.seeds.size()) + ',' + c.config_hash + '\n';
  }
  return out;
}

std::string experiment_runs_csv(const ExperimentResult& r) {
  std::string out;
  for (const auto& p : r.param_names) out += p + ',';
  out += "seed";
  for (const auto& m : r.metric_names) out += ',' + m;
  out += '\n';
  for (const auto& c : r.cells) {
    for (std::size_t s = 0; s < r.seeds.size(); ++s) {
      for (const auto& p : c.params) out += p + ',';
      out += std::to_string(r.seeds[s]);
      for (const auto& v : c.values) out += ',' + format_double(v[s]);
      out += '\n';
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVG

namespace {

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::string SvgChart::render() const {
  constexpr double W = 720, H = 440, left = 70, right = 170, top = 40, bottom = 60;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  for (double r : reference_lines) {
    ymin = std::min(ymin, r);
    ymax = std::max(ymax, r);
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  const double pw = W - left - right, ph = H - top - bottom;
  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return top + (ymax - y) / (ymax - ymin) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (const auto& s : series) {
    o << "<!-- data series=\"" << escape_xml(s.name) << "\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << ' ' << format_double(s.x[i]) << ',' << format_double(s.y[i]);
    o << " -->\n";
  }
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape_xml(title) << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = xmin + (xmax - xmin) * t / 4.0, yv = ymin + (ymax - ymin) * t / 4.0;
    o << "<text x=\"" << fixed(sx(xv), 1) << "\" y=\"" << H - bottom + 18 << "\" text-anchor=\"middle\">" << fixed(xv, 3) << "</text>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << fixed(sy(yv) + 4, 1) << "\" text-anchor=\"end\">" << fixed(yv, 3) << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << escape_xml(x_label) << "</text>\n";
  o << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << escape_xml(y_label) << "</text>\n";
  for (double r : reference_lines) {
    o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << fixed(sy(r), 2) << "\" y2=\"" << fixed(sy(r), 2)
      << "\" stroke=\"black\" stroke-dasharray=\"6,4\"/>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    if (s.lines && s.x.size() > 1) {
      o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) o << fixed(sx(s.x[i])) << ',' << fixed(sy(s.y[i])) << ' ';
      }
      o << "\"/>\n";
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      o << "<circle cx=\"" << fixed(sx(s.x[i])) << "\" cy=\"" << fixed(sy(s.y[i])) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = top + 14 + 18 * double(k);
    o << "<rect x=\"" << W - right + 12 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
    o << "<text x=\"" << W - right + 28 << "\" y=\"" << ly << "\">" << escape_xml(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

namespace {

std::optional<double> as_number(const std::string& s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

std::optional<SvgChart> chart_for(const ExperimentResult& r) {
  SvgChart chart;
  const auto& id = r.experiment_id;
  if (id == "stability") {
    chart.title = "IsoScore* of mini-batches vs. batch size";
    chart.x_label = "batch size";
    chart.y_label = "IsoScore*";
    std::vector<std::string> zetas;
    for (const auto& c : r.cells)
      if (std::find(zetas.begin(), zetas.end(), c.params[1]) == zetas.end()) zetas.push_back(c.params[1]);
    for (const auto& z : zetas) {
      SvgSeries s{"zeta=" + z, {}, {}, true};
      for (const auto& c : r.cells) {
        if (c.params[1] != z) continue;
        s.x.push_back(*as_number(c.params[0]));
        s.y.push_back(c.stat(0).mean);
      }
      chart.series.push_back(std::move(s));
    }
    if (r.notes.contains("true_score")) chart.reference_lines.push_back(*as_number(r.notes["true_score"].get<std::string>()));
    return chart;
  }
  if (id == "zeta_sweep") {
    chart.title = "Validation accuracy vs. shrinkage";
    chart.x_label = "zeta";
    chart.y_label = "validation accuracy";
    SvgSeries s{"I-STAR", {}, {}, true};
    for (const auto& c : r.cells) {
      s.x.push_back(*as_number(c.params[0]));
      s.y.push_back(c.stat(0).mean);
    }
    chart.series.push_back(std::move(s));
    return chart;
  }
  if (id == "lambda_sweep") {
    chart.title = "Isotropy vs. performance";
    chart.x_label = "IsoScore* (validation)";
    chart.y_label = "validation accuracy";
    for (const auto& c : r.cells) {
      SvgSeries s{"lambda=" + c.params[0], {}, {}, false};
      for (std::size_t k = 0; k < c.values[1].size(); ++k) {
        s.x.push_back(c.values[1][k]);
        s.y.push_back(c.values[0][k]);
      }
      chart.series.push_back(std::move(s));
    }
    return chart;
  }
  if (id == "cosreg_mean") {
    chart.title = "Mean final-layer activation per dimension";
    chart.x_label = "dimension";
    chart.y_label = "mean activation";
    const std::size_t first = r.metric_index("mean_dim_0");
    for (const auto& c : r.cells) {
      SvgSeries s{"lambda=" + c.params[0], {}, {}, true};
      for (std::size_t m = first; m < r.metric_names.size(); ++m) {
        s.x.push_back(double(m - first));
        s.y.push_back(c.stat(m).mean);
      }
      chart.series.push_back(std::move(s));
    }
    return chart;
  }
  if (id == "layer_isotropy") {
    chart.title = "Layer-wise IsoScore*";
    chart.x_label = "hidden layer";
    chart.y_label = "IsoScore*";
    for (const auto& c : r.cells) {
      SvgSeries s{"lambda=" + c.params[0], {}, {}, true};
      for (std::size_t m = 0; m + 1 < r.metric_names.size(); ++m) {
        s.x.push_back(double(m));
        s.y.push_back(c.stat(m).mean);
      }
      chart.series.push_back(std::move(s));
    }
    return chart;
  }
  if (id == "layer_scope") {
    chart.title = "I-STAR applied per layer";
    chart.x_label = "scope (0 = global, k = hidden layer k-1)";
    chart.y_label = "validation accuracy";
    SvgSeries s{"accuracy", {}, {}, false};
    for (std::size_t i = 0; i < r.cells.size(); ++i) {
      s.x.push_back(double(i));
      s.y.push_back(r.cells[i].stat(0).mean);
    }
    chart.series.push_back(std::move(s));
    return chart;
  }
  if (id == "id_vs_lambda") {
    chart.title = "TwoNN intrinsic dimension vs. lambda";
    chart.x_label = "lambda";
    chart.y_label = "TwoNN ID (final layer)";
    SvgSeries s{"I-STAR", {}, {}, true};
    for (const auto& c : r.cells) {
      if (auto x = as_number(c.params[0])) {
        s.x.push_back(*x);
        s.y.push_back(c.stat(0).mean);
      } else {
        chart.reference_lines.push_back(c.stat(0).mean);
      }
    }
    chart.series.push_back(std::move(s));
    return chart;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Manifest

std::string tool_version() { return "isoscope 0.1.0"; }

json RunManifest::to_json() const {
  json outs = json::array();
  for (const auto& e : outputs) outs.push_back({{"file", e.file}, {"hash", e.hash}});
  json seed_arr = json::array();
  for (auto s : seeds) seed_arr.push_back(std::to_string(s));
  return json{{"config", config}, {"seeds", seed_arr}, {"tool_version", tool_version}, {"outputs", outs}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  try {
    m.config = j.at("config");
    for (const auto& s : j.at("seeds")) m.seeds.push_back(std::stoull(s.get<std::string>()));
    m.tool_version = j.at("tool_version").get<std::string>();
    for (const auto& e : j.at("outputs")) m.outputs.push_back({e.at("file").get<std::string>(), e.at("hash").get<std::string>()});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptHeader, std::string("malformed manifest: ") + e.what());
  }
  return m;
}

RunManifest emit_files(const fs::path& out_dir, const std::vector<std::pair<std::string, std::string>>& files,
                       const json& config, const std::vector<std::uint64_t>& seeds) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());
  RunManifest m;
  m.config = config;
  m.seeds = seeds;
  m.tool_version = tool_version();
  for (const auto& [name, content] : files) {
    if (fs::path(name).has_parent_path()) throw Error(ErrorCode::IoFailure, "output name must be a plain file name");
    atomic_write(out_dir / name, content);
    m.outputs.push_back({name, git_blob_hash(content)});
  }
  atomic_write(out_dir / kManifestName, m.to_json().dump(2) + "\n");
  return m;
}

RunManifest emit_report(const ExperimentResult& result, const fs::path& out_dir) {
  result.check_hashes();
  std::vector<std::pair<std::string, std::string>> files;
  files.emplace_back(result.experiment_id + ".csv", experiment_csv(result));
  files.emplace_back(result.experiment_id + "_runs.csv", experiment_runs_csv(result));
  if (auto chart = chart_for(result)) files.emplace_back(result.experiment_id + ".svg", chart->render());
  json config = result.config;
  config["experiment_id"] = result.experiment_id;
  config["config_hash"] = result.config_hash;
  config["notes"] = result.notes;
  return emit_files(out_dir, files, config, result.seeds);
}

RunManifest emit_report(const IsoReport& report, const fs::path& out_dir, const json& config) {
  return emit_files(out_dir, {{"isoreport.csv", isoreport_csv(report)}}, config, {});
}

void verify_manifest(const fs::path& out_dir) {
  json j;
  try {
    j = json::parse(read_file(out_dir / kManifestName));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptHeader, std::string("manifest is not JSON: ") + e.what());
  }
  const auto m = RunManifest::from_json(j);
  for (const auto& e : m.outputs) {
    const auto actual = git_blob_hash(read_file(out_dir / e.file));
    if (actual != e.hash) throw Error(ErrorCode::HashMismatch, e.file + " hash " + actual + " != manifest " + e.hash);
  }
}

}  // namespace isoscope
