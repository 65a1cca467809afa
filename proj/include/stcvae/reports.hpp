#pragma once

// Sweep outputs: records.csv, summary.json, trajectory.svg and per-trial
// metric files, plus the CSV reader behind `sweep report`.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "stcvae/errors.hpp"
#include "stcvae/sweep.hpp"

namespace stcvae {

inline const std::vector<std::string>& records_csv_header() {
  static const std::vector<std::string> header{
      "trial",        "status",      "objective",  "dimension", "grouping_factor", "grouping_coefficient",
      "capacity",     "beta",        "repeat",     "seed",      "initial_elbo",    "final_elbo",
      "mig",          "entropies",   "binned_entropies", "reference", "error", "wall_time"};
  return header;
}

namespace detail {

inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_csv_real(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw FormatError("records.csv: bad number '" + s + "'");
  return v;
}

inline std::string join_reals(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ";" : "") + format_real(v[i]);
  return out;
}

inline std::vector<double> split_reals(const std::string& s) {
  std::vector<double> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) out.push_back(parse_csv_real(item));
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace detail

/// RFC-4180 rows: CRLF line ends, fields quoted only when needed.
inline void write_records_csv(std::ostream& os, const std::vector<SweepRecord>& records) {
  auto row = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) os << (i ? "," : "") << detail::csv_field(fields[i]);
    os << "\r\n";
  };
  row(records_csv_header());
  using detail::format_real;
  for (const auto& r : records) {
    row({std::to_string(r.spec.index), r.ok ? "ok" : "failed", r.objective, std::to_string(r.spec.dimension),
         std::to_string(r.spec.grouping_factor), format_real(r.spec.grouping_coefficient),
         std::to_string(r.spec.capacity), format_real(r.spec.beta), std::to_string(r.spec.repeat),
         std::to_string(r.spec.seed), format_real(r.initial_elbo), format_real(r.final_elbo), format_real(r.mig),
         detail::join_reals(r.entropies), detail::join_reals(r.binned_entropies), r.is_reference() ? "beta-tcvae" : "",
         r.error, format_real(r.wall_time)});
  }
}

/// Parses RFC-4180 text into rows of fields.
inline std::vector<std::vector<std::string>> parse_csv(std::istream& is) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, field_started = false;
  char ch;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };
  while (is.get(ch)) {
    if (quoted) {
      if (ch == '"') {
        if (is.peek() == '"') {
          is.get(ch);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
      continue;
    }
    if (ch == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (ch == ',') {
      end_field();
    } else if (ch == '\r') {
      if (is.peek() == '\n') is.get(ch);
      end_row();
    } else if (ch == '\n') {
      end_row();
    } else {
      field += ch;
      field_started = true;
    }
  }
  if (quoted) throw FormatError("csv: unterminated quoted field");
  if (field_started || !row.empty()) end_row();
  return rows;
}

inline std::vector<SweepRecord> read_records_csv(std::istream& is) {
  const auto rows = parse_csv(is);
  if (rows.empty() || rows.front() != records_csv_header()) throw FormatError("records.csv: unexpected header");
  std::vector<SweepRecord> out;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    const auto& f = rows[k];
    if (f.size() != records_csv_header().size()) {
      throw FormatError("records.csv: row " + std::to_string(k) + " has " + std::to_string(f.size()) + " fields");
    }
    auto count = [&](const std::string& s) {
      try {
        return static_cast<std::size_t>(std::stoull(s));
      } catch (const std::exception&) {
        throw FormatError("records.csv: bad integer '" + s + "' in row " + std::to_string(k));
      }
    };
    using detail::parse_csv_real;
    SweepRecord r;
    r.spec.index = count(f[0]);
    if (f[1] != "ok" && f[1] != "failed") throw FormatError("records.csv: bad status '" + f[1] + "'");
    r.ok = f[1] == "ok";
    r.objective = f[2];
    r.spec.dimension = count(f[3]);
    r.spec.grouping_factor = count(f[4]);
    r.spec.grouping_coefficient = parse_csv_real(f[5]);
    r.spec.capacity = count(f[6]);
    r.spec.beta = parse_csv_real(f[7]);
    r.spec.repeat = count(f[8]);
    r.spec.seed = count(f[9]);
    r.initial_elbo = parse_csv_real(f[10]);
    r.final_elbo = parse_csv_real(f[11]);
    r.mig = parse_csv_real(f[12]);
    r.entropies = detail::split_reals(f[13]);
    r.binned_entropies = detail::split_reals(f[14]);
    r.error = f[16];
    r.wall_time = parse_csv_real(f[17]);
    out.push_back(std::move(r));
  }
  return out;
}

// ---- summary ---------------------------------------------------------------

struct ReportSettings {
  double epsilon = 1e-3;
  double delta = 1e-2;
  std::vector<std::size_t> dimensions;  // for the reference coefficient; empty = from the records
};

inline nlohmann::json summary_json(const std::vector<SweepRecord>& records, const Trajectory& trajectory,
                                   const std::optional<TrajectoryFit>& fit, const std::string& fit_note,
                                   const ReportSettings& settings) {
  using nlohmann::json;
  json j;
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.ok ? 0 : 1;
  j["records"] = records.size();
  j["failed_records"] = failed;

  json points = json::array();
  for (const auto& p : trajectory.points) {
    json cells = json::array();
    for (const auto& [coef, elbo] : p.coefficient_elbo) cells.push_back({{"coefficient", coef}, {"mean_elbo", elbo}});
    points.push_back({{"capacity", p.capacity},
                      {"capacity_index", p.capacity_index},
                      {"best_coefficient", p.best_coefficient},
                      {"best_mean_elbo", p.best_mean_elbo},
                      {"cells", cells}});
  }
  j["trajectory"] = points;
  j["warnings"] = trajectory.warnings;
  if (fit) {
    j["fit"] = {{"x", "capacity_index"},
                {"a", fit->a},
                {"b", fit->b},
                {"c", fit->c},
                {"residual_rms", fit->residual_rms},
                {"standard_errors", fit->standard_errors}};
  } else {
    j["fit"] = nullptr;
    j["fit_note"] = fit_note;
  }

  std::vector<std::size_t> dims = settings.dimensions;
  if (dims.empty()) {
    std::set<std::size_t> seen;
    for (const auto& r : records) seen.insert(r.spec.dimension);
    dims.assign(seen.begin(), seen.end());
  }
  j["reference"] = {{"label", "beta-tcvae"},
                    {"coefficient", kReferenceCoefficient},
                    {"mean_over_dimensions", dims.empty() ? 0.0 : reference_coefficient(dims)},
                    {"dimensions", dims}};

  json flags = json::array();
  for (const auto& f : omniscient_by_configuration(records, settings.epsilon, settings.delta)) {
    flags.push_back({{"dimension", f.dimension},
                     {"grouping_factor", f.grouping_factor},
                     {"capacity", f.capacity},
                     {"beta", f.beta},
                     {"models", f.models},
                     {"omniscient_flag", f.result.flagged},
                     {"worst_dimension", f.result.worst_dimension},
                     {"fraction_below_epsilon", f.result.fraction_below}});
  }
  j["omniscient"] = {{"epsilon", settings.epsilon}, {"delta", settings.delta}, {"configurations", flags}};
  return j;
}

// ---- SVG -------------------------------------------------------------------

/// Scatter of best coefficients per capacity index, the fitted quadratic and
/// the factor-one reference line.
inline std::string trajectory_svg(const Trajectory& trajectory, const std::optional<TrajectoryFit>& fit) {
  constexpr double kW = 640, kH = 420, kLeft = 70, kRight = 20, kTop = 30, kBottom = 60;
  double x_max = 1.0;
  for (const auto& p : trajectory.points) x_max = std::max(x_max, static_cast<double>(p.capacity_index));
  const double x_min = 0.0;
  const double y_min = 0.0, y_max = 1.05;
  auto sx = [&](double x) { return kLeft + (x - x_min) / (x_max - x_min) * (kW - kLeft - kRight); };
  auto sy = [&](double y) { return kTop + (y_max - y) / (y_max - y_min) * (kH - kTop - kBottom); };
  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kW << "\" height=\"" << kH
    << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  // Axes and ticks.
  o << "<g id=\"axes\" stroke=\"black\" stroke-width=\"1\">\n"
    << "<line x1=\"" << sx(x_min) << "\" y1=\"" << sy(y_min) << "\" x2=\"" << sx(x_max) << "\" y2=\"" << sy(y_min)
    << "\"/>\n"
    << "<line x1=\"" << sx(x_min) << "\" y1=\"" << sy(y_min) << "\" x2=\"" << sx(x_min) << "\" y2=\"" << sy(y_max)
    << "\"/>\n</g>\n";
  o << "<g id=\"labels\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (double y = 0.0; y <= 1.0001; y += 0.25) {
    o << "<text x=\"" << kLeft - 8 << "\" y=\"" << sy(y) + 4 << "\" text-anchor=\"end\">" << y << "</text>\n";
  }
  for (const auto& p : trajectory.points) {
    o << "<text x=\"" << sx(static_cast<double>(p.capacity_index)) << "\" y=\"" << sy(y_min) + 18
      << "\" text-anchor=\"middle\">" << p.capacity << "</text>\n";
  }
  o << "<text x=\"" << (kLeft + kW - kRight) / 2 << "\" y=\"" << kH - 15
    << "\" text-anchor=\"middle\">parameter capacity</text>\n"
    << "<text x=\"18\" y=\"" << (kTop + kH - kBottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << (kTop + kH - kBottom) / 2 << ")\">best grouping coefficient</text>\n</g>\n";
  // Reference line.
  o << "<g id=\"reference\" data-coefficient=\"" << detail::format_real(kReferenceCoefficient) << "\">\n"
    << "<line x1=\"" << sx(x_min) << "\" y1=\"" << sy(kReferenceCoefficient) << "\" x2=\"" << sx(x_max) << "\" y2=\""
    << sy(kReferenceCoefficient) << "\" stroke=\"#c0392b\" stroke-dasharray=\"6 4\"/>\n"
    << "<text x=\"" << sx(x_max) - 4 << "\" y=\"" << sy(kReferenceCoefficient) - 6
    << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#c0392b\">beta-TCVAE 0.178</text>\n"
    << "</g>\n";
  if (fit) {
    o << "<polyline id=\"fit\" fill=\"none\" stroke=\"#2c3e50\" stroke-width=\"1.5\" points=\"";
    for (int s = 0; s <= 100; ++s) {
      const double x = x_min + (x_max - x_min) * s / 100.0;
      const double y = std::clamp((*fit)(x), y_min, y_max);
      o << (s ? " " : "") << sx(x) << ',' << sy(y);
    }
    o << "\"/>\n";
  }
  o << "<g id=\"points\" fill=\"#2980b9\">\n";
  for (const auto& p : trajectory.points) {
    o << "<circle cx=\"" << sx(static_cast<double>(p.capacity_index)) << "\" cy=\"" << sy(p.best_coefficient)
      << "\" r=\"5\"/>\n";
  }
  o << "</g>\n</svg>\n";
  return o.str();
}

// ---- files -----------------------------------------------------------------

struct ReportFiles {
  std::filesystem::path records_csv;
  std::filesystem::path summary_json;
  std::filesystem::path trajectory_svg;
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  os.close();
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace detail

/// Writes records.csv, summary.json and trajectory.svg into `out_dir`.
inline ReportFiles emit_reports(const std::vector<SweepRecord>& records, const std::filesystem::path& out_dir,
                                const ReportSettings& settings, const std::vector<std::size_t>& capacities = {}) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
  const Trajectory trajectory = best_elbo_trajectory(records, capacities);
  std::string fit_note;
  const auto fit = fit_trajectory(trajectory, &fit_note);

  ReportFiles files{out_dir / "records.csv", out_dir / "summary.json", out_dir / "trajectory.svg"};
  std::ostringstream csv;
  write_records_csv(csv, records);
  detail::write_text(files.records_csv, csv.str());
  detail::write_text(files.summary_json, summary_json(records, trajectory, fit, fit_note, settings).dump(2) + "\n");
  detail::write_text(files.trajectory_svg, trajectory_svg(trajectory, fit));
  return files;
}

/// Per-trial metric report with the fixed field names.
inline nlohmann::json trial_metrics_json(const SweepRecord& r, double epsilon) {
  bool flagged = false;
  for (double h : r.entropies) flagged = flagged || h < epsilon;
  return metrics_json(r.mig_report, r.entropies, flagged);
}

}  // namespace stcvae
