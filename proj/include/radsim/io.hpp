#pragma once

#include "radsim/config.hpp"
#include "radsim/rads.hpp"
#include "radsim/sequence.hpp"
#include "radsim/spectrafit.hpp"
#include "radsim/walker.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace radsim::io {

namespace fs = std::filesystem;

inline std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

inline void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

inline std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

namespace detail {

inline double number(const std::string& cell, const fs::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kIo, path.string() + ": not a number '" + cell + "'");
  }
}

/// Column positions by header name; every name in `required` must appear.
inline std::vector<std::size_t> columns(const std::vector<std::string>& header, std::initializer_list<const char*> required,
                                        const fs::path& path) {
  std::vector<std::size_t> idx;
  for (const char* name : required) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorCode::kIo, path.string() + ": missing column " + name);
    idx.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  return idx;
}

}  // namespace detail

// ---- scheme and signal ------------------------------------------------------

inline void write_scheme_csv(const fs::path& path, const GradientScheme& scheme) {
  std::string t = "dir_x,dir_y,dir_z,b_s_per_mm2,delta_ms,Delta_ms\n";
  for (const auto& a : scheme)
    t += fmt::format("{},{},{},{},{},{}\n", a.direction.x(), a.direction.y(), a.direction.z(),
                     units::b_to_s_per_mm2(a.b), a.delta, a.Delta);
  write_text(path, t);
}

inline GradientScheme read_scheme_csv(const fs::path& path) {
  const auto rows = read_csv(path);
  if (rows.size() < 2) throw Error(ErrorCode::kIo, path.string() + ": no acquisitions");
  const auto c = detail::columns(rows[0], {"dir_x", "dir_y", "dir_z", "b_s_per_mm2", "delta_ms", "Delta_ms"}, path);
  std::vector<PgseAcquisition> acq;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() < rows[0].size()) throw Error(ErrorCode::kIo, path.string() + ": short row");
    const auto v = [&](std::size_t i) { return detail::number(row[c[i]], path); };
    Vec3 d(v(0), v(1), v(2));
    if (d.norm() == 0.0) d = Vec3::UnitZ();  // b=0 rows may leave the direction empty
    acq.push_back(make_acquisition(d, units::b_from_s_per_mm2(v(3)), v(4), v(5)));
  }
  return GradientScheme(std::move(acq));
}

inline void write_signal_csv(const fs::path& path, const GradientScheme& scheme, const SignalVector& sig) {
  std::string t = "index,b_s_per_mm2,dir_x,dir_y,dir_z,delta_ms,Delta_ms,s_normalized,s_real\n";
  for (std::size_t k = 0; k < scheme.size(); ++k) {
    const auto& a = scheme[k];
    t += fmt::format("{},{},{},{},{},{},{},{},{}\n", k, units::b_to_s_per_mm2(a.b), a.direction.x(), a.direction.y(),
                     a.direction.z(), a.delta, a.Delta, sig.s[k], sig.real[k]);
  }
  write_text(path, t);
}

struct SignalFile {
  GradientScheme scheme;
  std::vector<double> s;
};

inline SignalFile read_signal_csv(const fs::path& path) {
  const auto rows = read_csv(path);
  if (rows.size() < 2) throw Error(ErrorCode::kIo, path.string() + ": no signal rows");
  const auto c = detail::columns(
      rows[0], {"b_s_per_mm2", "dir_x", "dir_y", "dir_z", "delta_ms", "Delta_ms", "s_normalized"}, path);
  std::vector<PgseAcquisition> acq;
  std::vector<double> s;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() < rows[0].size()) throw Error(ErrorCode::kIo, path.string() + ": short row");
    const auto v = [&](std::size_t i) { return detail::number(row[c[i]], path); };
    Vec3 d(v(1), v(2), v(3));
    if (d.norm() == 0.0) d = Vec3::UnitZ();
    acq.push_back(make_acquisition(d, units::b_from_s_per_mm2(v(0)), v(4), v(5)));
    s.push_back(v(6));
  }
  return {GradientScheme(std::move(acq)), std::move(s)};
}

// ---- fits -------------------------------------------------------------------

/// One row per basis column. `fraction` is the stage-one fit; `fraction_deducted`
/// is after the EAEC deduction (equal to `fraction` when none was applied).
inline void write_spectrum_csv(const fs::path& path, const SpectrumFit& fit, const SpectrumFit* deducted = nullptr) {
  const SpectrumFit& d = deducted ? *deducted : fit;
  std::string t = "type,value_um2_per_ms,value_mm2_per_s,fraction,fraction_deducted\n";
  const auto& g = fit.grid;
  for (std::size_t i = 0; i < g.n_aniso(); ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    t += fmt::format("aniso,{},{},{},{}\n", g.lambda_par[i], units::diffusivity_to_mm2_per_s(g.lambda_par[i]),
                     fit.fractions[e], d.fractions[e]);
  }
  for (std::size_t j = 0; j < g.n_iso(); ++j) {
    const auto e = static_cast<Eigen::Index>(g.n_aniso() + j);
    t += fmt::format("iso,{},{},{},{}\n", g.iso_d[j], units::diffusivity_to_mm2_per_s(g.iso_d[j]), fit.fractions[e],
                     d.fractions[e]);
  }
  write_text(path, t);
}

struct SpectrumRow {
  bool aniso = false;
  double value = 0.0;
  double fraction = 0.0;
  double fraction_deducted = 0.0;
};

inline std::vector<SpectrumRow> read_spectrum_csv(const fs::path& path) {
  const auto rows = read_csv(path);
  if (rows.empty()) throw Error(ErrorCode::kIo, path.string() + ": empty");
  const auto c = detail::columns(rows[0], {"type", "value_um2_per_ms", "fraction", "fraction_deducted"}, path);
  std::vector<SpectrumRow> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    SpectrumRow row;
    row.aniso = rows[r][c[0]] == "aniso";
    row.value = detail::number(rows[r][c[1]], path);
    row.fraction = detail::number(rows[r][c[2]], path);
    row.fraction_deducted = detail::number(rows[r][c[3]], path);
    out.push_back(row);
  }
  return out;
}

inline void write_sweep_csv(const fs::path& path, const SpectrumFit& fit) {
  std::string t = "lambda_perp_um2_per_ms,residual_sq,converged,selected\n";
  for (std::size_t c = 0; c < fit.grid.lambda_perp.size(); ++c)
    t += fmt::format("{},{},{},{}\n", fit.grid.lambda_perp[c], fit.residuals[c], fit.converged[c] ? 1 : 0,
                     c == fit.best_index ? 1 : 0);
  write_text(path, t);
}

inline void write_adc_spectrum_csv(const fs::path& path, const AdcSpectrum& a) {
  std::string t = "adc_um2_per_ms,adc_mm2_per_s,fraction\n";
  for (std::size_t j = 0; j < a.d.size(); ++j)
    t += fmt::format("{},{},{}\n", a.d[j], units::diffusivity_to_mm2_per_s(a.d[j]),
                     a.fractions[static_cast<Eigen::Index>(j)]);
  write_text(path, t);
}

inline void write_bic_trace_csv(const fs::path& path, const RadsResult& r) {
  std::string t = "lambda_par_um2_per_ms,lambda_par_mm2_per_s,f_diseased,rss,bic\n";
  for (const auto& c : r.trace)
    t += fmt::format("{},{},{},{},{}\n", c.lambda_par, units::diffusivity_to_mm2_per_s(c.lambda_par), c.f, c.rss,
                     c.bic);
  write_text(path, t);
}

inline std::string rads_report(const RadsResult& r) {
  std::string t;
  t += fmt::format("fraction_healthy = {}\n", r.fraction_healthy());
  t += fmt::format("fraction_diseased = {}\n", r.fraction_diseased());
  t += fmt::format("lambda_par_diseased_um2_per_ms = {}\n", r.chosen.lambda_par);
  t += fmt::format("lambda_par_diseased_mm2_per_s = {}\n", units::diffusivity_to_mm2_per_s(r.chosen.lambda_par));
  t += fmt::format("lambda_par_healthy_um2_per_ms = {}\n", r.healthy_lambda_par);
  t += fmt::format("average_axial_adc_um2_per_ms = {}\n", r.average_axial_adc());
  t += fmt::format("average_axial_adc_mm2_per_s = {}\n", units::diffusivity_to_mm2_per_s(r.average_axial_adc()));
  t += fmt::format("rss = {}\n", r.chosen.rss);
  t += fmt::format("bic = {}\n", r.chosen.bic);
  t += fmt::format("bic_parameters = 2\n");
  return t;
}

// ---- trajectories -----------------------------------------------------------

/// Little-endian records: uint32 spin, uint32 step, float32 x, y, z.
inline void write_trajectory(const fs::path& path, const std::vector<TrajectoryPoint>& points) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  for (const auto& p : points) {
    const std::uint32_t ids[2] = {p.spin, p.step};
    const float xyz[3] = {p.x, p.y, p.z};
    out.write(reinterpret_cast<const char*>(ids), sizeof ids);
    out.write(reinterpret_cast<const char*>(xyz), sizeof xyz);
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

// ---- SVG charts -------------------------------------------------------------

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Bar {
  std::string label;
  double value = 0.0;
  std::string group;
};

namespace detail {

inline constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 160, kTop = 40, kBottom = 55;
inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

inline std::pair<double, double> padded(double lo, double hi) {
  if (!(hi > lo)) return {lo - 0.5, hi + 0.5};
  return {lo, hi};
}

inline std::string frame(const std::string& title, const std::string& xlabel, const std::string& ylabel, double x0,
                         double x1, double y0, double y1) {
  std::string t = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
      "font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      kWidth, kHeight);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  t += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n", kLeft + pw / 2,
                   escape(title));
  t += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", kLeft,
                   kTop, pw, ph);
  for (int i = 0; i <= 5; ++i) {
    const double fx = x0 + (x1 - x0) * i / 5.0, px = kLeft + pw * i / 5.0;
    const double fy = y0 + (y1 - y0) * i / 5.0, py = kTop + ph - ph * i / 5.0;
    t += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", px, kTop + ph,
                     kTop + ph + 5);
    t += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.3g}</text>\n", px, kTop + ph + 18, fx);
    t += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", kLeft - 5, py, kLeft);
    t += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n", kLeft - 8, py + 4, fy);
  }
  t += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", kLeft + pw / 2, kHeight - 12,
                   escape(xlabel));
  t += fmt::format("<text x=\"18\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0})\">{1}</text>\n",
                   kTop + ph / 2, escape(ylabel));
  return t;
}

}  // namespace detail

inline std::string line_chart_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                  const std::vector<Series>& series) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = 0.0, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (series.empty()) x0 = 0.0, x1 = 1.0, y1 = 1.0;
  std::tie(x0, x1) = detail::padded(x0, x1);
  std::tie(y0, y1) = detail::padded(y0, y1);
  std::string t = detail::frame(title, xlabel, ylabel, x0, x1, y0, y1);
  const double pw = detail::kWidth - detail::kLeft - detail::kRight;
  const double ph = detail::kHeight - detail::kTop - detail::kBottom;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = detail::kPalette[k % std::size(detail::kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < series[k].x.size(); ++i)
      pts += fmt::format("{:.2f},{:.2f} ", detail::kLeft + pw * (series[k].x[i] - x0) / (x1 - x0),
                         detail::kTop + ph - ph * (series[k].y[i] - y0) / (y1 - y0));
    t += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n", color, pts);
    const double ly = detail::kTop + 14 + 18 * static_cast<double>(k);
    t += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>\n",
                     detail::kWidth - detail::kRight + 12, ly, detail::kWidth - detail::kRight + 32, color);
    t += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", detail::kWidth - detail::kRight + 38, ly + 4,
                     detail::escape(series[k].label));
  }
  return t + "</svg>\n";
}

/// Bars in input order; each distinct group gets its own colour.
inline std::string bar_chart_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                 const std::vector<Bar>& bars) {
  double y1 = 0.0;
  for (const auto& b : bars) y1 = std::max(y1, b.value);
  if (!(y1 > 0.0)) y1 = 1.0;
  std::string t = detail::frame(title, xlabel, ylabel, 0.0, static_cast<double>(bars.size()), 0.0, y1);
  const double pw = detail::kWidth - detail::kLeft - detail::kRight;
  const double ph = detail::kHeight - detail::kTop - detail::kBottom;
  std::vector<std::string> groups;
  for (const auto& b : bars)
    if (std::find(groups.begin(), groups.end(), b.group) == groups.end()) groups.push_back(b.group);
  const double w = bars.empty() ? 0.0 : pw / static_cast<double>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto gi = static_cast<std::size_t>(std::find(groups.begin(), groups.end(), bars[i].group) - groups.begin());
    const double h = ph * bars[i].value / y1;
    t += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\"><title>{}</title></rect>\n",
                     detail::kLeft + w * static_cast<double>(i) + 0.1 * w, detail::kTop + ph - h, 0.8 * w, h,
                     detail::kPalette[gi % std::size(detail::kPalette)], detail::escape(bars[i].label));
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double ly = detail::kTop + 14 + 18 * static_cast<double>(g);
    t += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"14\" height=\"10\" fill=\"{}\"/>\n",
                     detail::kWidth - detail::kRight + 12, ly - 6, detail::kPalette[g % std::size(detail::kPalette)]);
    t += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", detail::kWidth - detail::kRight + 32, ly + 4,
                     detail::escape(groups[g]));
  }
  return t + "</svg>\n";
}

/// Signal decay per gradient direction.
inline std::string signal_svg(const std::string& title, const GradientScheme& scheme, std::span<const double> s) {
  std::vector<Series> series;
  std::vector<Vec3> dirs;
  for (std::size_t k = 0; k < scheme.size(); ++k) {
    if (k == scheme.b0_index()) continue;
    const Vec3& d = scheme[k].direction;
    std::size_t i = 0;
    while (i < dirs.size() && (dirs[i] - d).norm() > 1e-9) ++i;
    if (i == dirs.size()) {
      dirs.push_back(d);
      series.push_back({fmt::format("g = ({:.2g}, {:.2g}, {:.2g})", d.x(), d.y(), d.z()),
                        {0.0},
                        {s[scheme.b0_index()]}});
    }
    series[i].x.push_back(units::b_to_s_per_mm2(scheme[k].b));
    series[i].y.push_back(s[k]);
  }
  return line_chart_svg(title, "b (s/mm^2)", "signal", series);
}

inline std::string spectrum_svg(const std::string& title, const SpectrumFit& fit) {
  std::vector<Bar> bars;
  for (std::size_t i = 0; i < fit.grid.n_aniso(); ++i)
    bars.push_back({fmt::format("lambda_par {}", fit.grid.lambda_par[i]),
                    fit.fractions[static_cast<Eigen::Index>(i)], "anisotropic"});
  for (std::size_t j = 0; j < fit.grid.n_iso(); ++j)
    bars.push_back({fmt::format("D {}", fit.grid.iso_d[j]),
                    fit.fractions[static_cast<Eigen::Index>(fit.grid.n_aniso() + j)], "isotropic"});
  return bar_chart_svg(title, "basis column (anisotropic then isotropic, 0 to 3 um^2/ms each)", "signal fraction",
                       bars);
}

inline std::string bic_svg(const std::string& title, const RadsResult& r) {
  Series s{"BIC", {}, {}};
  for (const auto& c : r.trace) {
    s.x.push_back(c.lambda_par);
    s.y.push_back(c.bic);
  }
  return line_chart_svg(title, "candidate lambda_par (um^2/ms)", "BIC", {s});
}

}  // namespace radsim::io
