#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vem/binary_io.hpp"
#include "vem/linalg.hpp"
#include "vem/matrix.hpp"

namespace vem {

inline constexpr double kDefaultNcEpsilon = 1e-6;

// Squared Pearson correlation per column.
inline Vector r2_per_vertex(const Matrix& pred, const Matrix& target) {
  require_same_shape(pred, target, "r2_per_vertex");
  if (pred.rows() < 2) throw PreconditionError("r2_per_vertex: need at least 2 samples");
  // Column-major copies give contiguous columns.
  const Eigen::MatrixXd p = pred;
  const Eigen::MatrixXd t = target;
  const auto n = static_cast<std::size_t>(p.rows());
  Vector out(p.cols());
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    const double r = pearson_corr(std::span<const double>(p.col(j).data(), n),
                                  std::span<const double>(t.col(j).data(), n));
    out(j) = r * r;
  }
  return out;
}

struct NormalizedScore {
  double overall_m = 0.0;
  std::vector<std::optional<double>> per_vertex;  // empty where excluded
  std::size_t n_excluded = 0;
};

// m = mean over vertices with NC > eps of R^2 / NC.
inline NormalizedScore noise_normalized_score(const Vector& r2, const Vector& nc,
                                              double nc_epsilon = kDefaultNcEpsilon, bool clip = false) {
  if (r2.size() != nc.size())
    throw PreconditionError("noise_normalized_score: length mismatch");
  NormalizedScore s;
  s.per_vertex.resize(static_cast<std::size_t>(r2.size()));
  double sum = 0.0;
  std::size_t included = 0;
  for (Eigen::Index j = 0; j < r2.size(); ++j) {
    if (!(nc(j) >= 0.0 && nc(j) <= 1.0))
      throw PreconditionError("noise_normalized_score: noise ceiling outside [0, 1]");
    if (nc(j) <= nc_epsilon) {
      ++s.n_excluded;
      continue;
    }
    double v = r2(j) / nc(j);
    if (clip) v = std::min(v, 1.0);
    s.per_vertex[static_cast<std::size_t>(j)] = v;
    sum += v;
    ++included;
  }
  if (included == 0)
    throw ValidationError("noise_normalized_score: every vertex has noise ceiling <= epsilon; metric undefined");
  s.overall_m = sum / static_cast<double>(included);
  return s;
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw PreconditionError("median of empty list");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Median normalized score per ROI over included vertices. ROIs without any
// included vertex are omitted.
inline std::map<std::string, double> roi_median_scores(const std::vector<std::optional<double>>& normalized,
                                                       std::span<const std::uint32_t> roi_labels,
                                                       std::span<const std::string> roi_names) {
  if (roi_labels.size() != normalized.size())
    throw PreconditionError("roi_median_scores: label count differs from vertex count");
  std::map<std::string, std::vector<double>> groups;
  for (std::size_t j = 0; j < normalized.size(); ++j) {
    if (roi_labels[j] >= roi_names.size()) throw PreconditionError("roi_median_scores: label out of range");
    if (normalized[j]) groups[roi_names[roi_labels[j]]].push_back(*normalized[j]);
  }
  std::map<std::string, double> out;
  for (auto& [roi, values] : groups) out[roi] = median(std::move(values));
  return out;
}

struct EvalReport {
  std::vector<double> per_vertex_r2;
  std::vector<std::optional<double>> per_vertex_normalized;
  double overall_m = 0.0;
  std::map<std::string, double> per_roi_median;
  std::size_t n_excluded_vertices = 0;

  bool operator==(const EvalReport&) const = default;
};

inline EvalReport evaluate_predictions(const Matrix& pred, const Matrix& target, const Vector& nc,
                                       std::span<const std::uint32_t> roi_labels,
                                       std::span<const std::string> roi_names,
                                       double nc_epsilon = kDefaultNcEpsilon, bool clip = false) {
  const Vector r2 = r2_per_vertex(pred, target);
  auto score = noise_normalized_score(r2, nc, nc_epsilon, clip);
  EvalReport rep;
  rep.per_vertex_r2.assign(r2.data(), r2.data() + r2.size());
  rep.overall_m = score.overall_m;
  rep.n_excluded_vertices = score.n_excluded;
  rep.per_roi_median = roi_median_scores(score.per_vertex, roi_labels, roi_names);
  rep.per_vertex_normalized = std::move(score.per_vertex);
  return rep;
}

// ---------------------------------------------------------------------------
// Report files.
//
// CSV:
//   vertex,r2,normalized            header
//   <j>,<r2>,<normalized or empty>  one row per vertex
//   #summary,overall_m,<m>
//   #summary,n_excluded_vertices,<count>
//   #roi_median,<roi>,<median>      one row per ROI, sorted by name
// JSON: an object with the EvalReport field names; excluded vertices are null.
// Reals are printed with 17 significant digits so they parse back exactly.

enum class ReportFormat { csv, json };

namespace detail {

inline std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["per_vertex_r2"] = r.per_vertex_r2;
  auto norm = nlohmann::ordered_json::array();
  for (const auto& v : r.per_vertex_normalized) norm.push_back(v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr));
  j["per_vertex_normalized"] = norm;
  j["overall_m"] = r.overall_m;
  j["per_roi_median"] = r.per_roi_median;
  j["n_excluded_vertices"] = r.n_excluded_vertices;
  return j;
}

inline std::string report_csv(const EvalReport& r) {
  std::string out = "vertex,r2,normalized\n";
  for (std::size_t j = 0; j < r.per_vertex_r2.size(); ++j) {
    out += std::to_string(j) + "," + detail::fmt_real(r.per_vertex_r2[j]) + ",";
    if (r.per_vertex_normalized[j]) out += detail::fmt_real(*r.per_vertex_normalized[j]);
    out += "\n";
  }
  out += "#summary,overall_m," + detail::fmt_real(r.overall_m) + "\n";
  out += "#summary,n_excluded_vertices," + std::to_string(r.n_excluded_vertices) + "\n";
  for (const auto& [roi, m] : r.per_roi_median) out += "#roi_median," + roi + "," + detail::fmt_real(m) + "\n";
  return out;
}

inline void emit_report(const EvalReport& r, const std::filesystem::path& path, ReportFormat format) {
  io::write_text(path, format == ReportFormat::csv ? report_csv(r) : to_json(r).dump(2) + "\n");
}

inline EvalReport parse_report_json(const std::string& text) {
  EvalReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.per_vertex_r2 = j.at("per_vertex_r2").get<std::vector<double>>();
    for (const auto& v : j.at("per_vertex_normalized"))
      r.per_vertex_normalized.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    r.overall_m = j.at("overall_m").get<double>();
    r.per_roi_median = j.at("per_roi_median").get<std::map<std::string, double>>();
    r.n_excluded_vertices = j.at("n_excluded_vertices").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("report json: ") + e.what());
  }
  return r;
}

inline EvalReport parse_report_csv(const std::string& text) {
  EvalReport r;
  std::stringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "vertex,r2,normalized")
    throw ValidationError("report csv: bad header");
  const auto fields = [](const std::string& l) {
    std::vector<std::string> out;
    std::stringstream ss(l);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    if (!l.empty() && l.back() == ',') out.emplace_back();
    return out;
  };
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = fields(line);
      if (f.size() != 3) throw ValidationError("report csv: expected 3 fields in '" + line + "'");
      if (f[0] == "#summary") {
        if (f[1] == "overall_m") r.overall_m = std::stod(f[2]);
        else if (f[1] == "n_excluded_vertices") r.n_excluded_vertices = std::stoull(f[2]);
        else throw ValidationError("report csv: unknown summary '" + f[1] + "'");
      } else if (f[0] == "#roi_median") {
        r.per_roi_median[f[1]] = std::stod(f[2]);
      } else {
        if (std::stoull(f[0]) != r.per_vertex_r2.size()) throw ValidationError("report csv: vertex rows out of order");
        r.per_vertex_r2.push_back(std::stod(f[1]));
        r.per_vertex_normalized.push_back(f[2].empty() ? std::nullopt : std::optional<double>(std::stod(f[2])));
      }
    }
  } catch (const std::logic_error& e) {
    throw ValidationError(std::string("report csv: bad number: ") + e.what());
  }
  return r;
}

inline EvalReport load_report(const std::filesystem::path& path, ReportFormat format) {
  const auto text = io::read_text(path);
  return format == ReportFormat::csv ? parse_report_csv(text) : parse_report_json(text);
}

}  // namespace vem
