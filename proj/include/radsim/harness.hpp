#pragma once

#include "radsim/config.hpp"
#include "radsim/geometry.hpp"
#include "radsim/io.hpp"
#include "radsim/rads.hpp"
#include "radsim/signal.hpp"
#include "radsim/spectrafit.hpp"
#include "radsim/stats.hpp"
#include "radsim/walker.hpp"

#include <fmt/format.h>

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace radsim {

inline GradientScheme build_scheme(const SchemeConfig& c) {
  if (c.file) return io::read_scheme_csv(*c.file);
  if (c.directions.empty()) throw Error(ErrorCode::kConfig, "scheme needs at least one direction");
  std::vector<double> b;
  if (c.b_values_s_per_mm2.empty()) {
    if (c.b_count < 2) throw Error(ErrorCode::kConfig, "scheme.b_count must be at least 2");
    b = uniform_b_values(c.b_count, units::b_from_s_per_mm2(c.b_max_s_per_mm2));
  } else {
    for (double v : c.b_values_s_per_mm2) b.push_back(units::b_from_s_per_mm2(v));
  }
  return make_scheme(c.directions, b, c.delta_ms, c.Delta_ms);
}

/// free-only walks an empty voxel; every other experiment uses the configured one.
inline VoxelGeometry experiment_geometry(const ExperimentConfig& c) {
  if (c.experiment == Experiment::kFreeOnly) {
    GeometryConfig g = c.geometry;
    g.fibers.reset();
    g.cells.reset();
    return build_voxel(g);
  }
  return build_voxel(c.geometry);
}

inline WalkConfig experiment_walk(const ExperimentConfig& c, std::size_t replicate) {
  WalkConfig w = c.walk;
  w.seed = c.walk.seed + replicate;
  if (c.experiment == Experiment::kFiberOnly) w.walk_only = Compartment::IA;
  if (c.experiment == Experiment::kCellOnly) w.walk_only = Compartment::ICEA;
  return w;
}

/// Compartment runs report the compartment's signal scaled by its spin share,
/// so the b=0 value is the compartment's volume proportion.
inline SignalVector experiment_signal(const ExperimentConfig& c, const SpinEnsemble& e, const GradientScheme& scheme) {
  switch (c.experiment) {
    case Experiment::kFiberOnly:
      return synthesize_signal(e, scheme, Compartment::IA, c.walk.threads, Normalization::kEnsemble);
    case Experiment::kCellOnly:
      return synthesize_signal(e, scheme, Compartment::ICEA, c.walk.threads, Normalization::kEnsemble);
    case Experiment::kAxonalHealth:
      if (c.rads.source == RadsSource::kIntraAxonal)
        return synthesize_signal(e, scheme, Compartment::IA, c.walk.threads, Normalization::kSelection);
      return synthesize_signal(e, scheme, std::nullopt, c.walk.threads);
    default:
      return synthesize_signal(e, scheme, std::nullopt, c.walk.threads);
  }
}

/// EAEC deduction share for an experiment: only signals that contain the
/// extra-axonal space get it.
inline double experiment_deduction(const ExperimentConfig& c) {
  switch (c.experiment) {
    case Experiment::kFullStructure: return c.fit.options.eaec_deduction;
    case Experiment::kAxonalHealth:
      return c.rads.source == RadsSource::kFull ? c.fit.options.eaec_deduction : 0.0;
    default: return 0.0;
  }
}

struct FitOutcome {
  SpectrumFit fit;
  SpectrumFit deducted;
  std::optional<RadsResult> rads;
  std::string rads_note;
};

/// Below this anisotropic mass a RADS fit is not attempted.
inline constexpr double kMinRadsMass = 1e-2;

/// Stage one, the EAEC deduction and stage two.
inline FitOutcome fit_pipeline(std::span<const double> signal, const GradientScheme& scheme, const FitConfig& fc,
                               double deduction) {
  FitOutcome o;
  const BasisGrid grid = fc.grid();
  o.fit = fit_spectrum(signal, scheme, grid, fc.options);
  if (o.fit.fiber_fraction() < kMinRadsMass) {
    o.deducted = o.fit;
    o.rads_note = "anisotropic mass below 0.01; RADS not fitted";
    return o;
  }
  o.deducted = deduct_eaec_anisotropy(o.fit, deduction);
  o.rads = fit_rads(rads_input(o.fit, o.deducted, scheme), scheme, grid);
  return o;
}

struct MetricSummary {
  std::string name;
  std::string unit;
  std::vector<double> values;
  /// Ground truth the t-test is run against, when one exists.
  std::optional<double> reference;
  std::optional<stats::TTest> t;
};

struct HealthPoint {
  std::size_t replicate = 0;
  double true_diseased = 0.0;
  double predicted_diseased = 0.0;
  double lambda_par_diseased = 0.0;
  double true_axial_adc = 0.0;
  double predicted_axial_adc = 0.0;
};

struct HealthSummary {
  std::vector<HealthPoint> points;
  std::optional<stats::Correlation> proportion_r;
  std::optional<stats::Correlation> axial_r;
  double proportion_rmse = 0.0;
  /// Mean |lambda_par - D_diseased| / D_diseased over mixes with diseased fibers.
  double lambda_par_relative_error = 0.0;
  std::vector<std::string> notes;
};

struct StatsReport {
  Experiment experiment = Experiment::kFullStructure;
  std::size_t replicates = 0;
  std::vector<MetricSummary> metrics;
  std::optional<HealthSummary> health;
  std::vector<std::string> notes;

  const MetricSummary* metric(std::string_view name) const {
    for (const auto& m : metrics)
      if (m.name == name) return &m;
    return nullptr;
  }
};

namespace detail {

class MetricTable {
 public:
  void add(const std::string& name, const std::string& unit, double value,
           std::optional<double> reference = std::nullopt) {
    for (auto& m : metrics_)
      if (m.name == name) {
        m.values.push_back(value);
        return;
      }
    metrics_.push_back({name, unit, {value}, reference, std::nullopt});
  }

  std::vector<MetricSummary> finish() {
    for (auto& m : metrics_)
      if (m.values.size() >= 2) m.t = stats::one_sample_t(m.values, m.reference.value_or(0.0));
    return std::move(metrics_);
  }

 private:
  std::vector<MetricSummary> metrics_;
};

inline std::string pct_label(double fraction) { return fmt::format("{:03d}", static_cast<int>(std::lround(fraction * 100))); }

inline void write_signal_artifacts(const std::filesystem::path& dir, const std::string& title,
                                   const GradientScheme& scheme, const SignalVector& sig) {
  io::write_signal_csv(dir / "signal.csv", scheme, sig);
  io::write_text(dir / "signal.svg", io::signal_svg(title + ": signal", scheme, sig.s));
}

inline void write_fit_artifacts(const std::filesystem::path& dir, const std::string& title, const FitOutcome& o) {
  io::write_spectrum_csv(dir / "spectrum.csv", o.fit, &o.deducted);
  io::write_text(dir / "spectrum.svg", io::spectrum_svg(title + ": spectrum", o.fit));
  io::write_sweep_csv(dir / "lambda_perp_sweep.csv", o.fit);
  if (o.rads) {
    io::write_text(dir / "rads_report.txt", io::rads_report(*o.rads));
    io::write_bic_trace_csv(dir / "bic_trace.csv", *o.rads);
    io::write_text(dir / "bic.svg", io::bic_svg(title + ": BIC", *o.rads));
  } else {
    io::write_text(dir / "rads_report.txt", "status = skipped\nreason = " + o.rads_note + "\n");
  }
}

inline void add_fit_metrics(MetricTable& t, const FitOutcome& o, const VolumeFractions& truth, bool compartment_run) {
  // Compartment runs carry only part of the voxel, so the geometric fractions are no reference.
  const auto ref = [&](double v) { return compartment_run ? std::nullopt : std::optional<double>(v); };
  t.add("fiber_fraction", "1", o.fit.fiber_fraction(), ref(truth.fiber));
  t.add("cell_fraction", "1", o.fit.cell_fraction(), ref(truth.cell));
  t.add("free_fraction", "1", o.fit.free_fraction(), ref(truth.free));
  t.add("total_fraction", "1", o.fit.total());
  t.add("lambda_perp", "um^2/ms", o.fit.lambda_perp);
  t.add("fiber_fraction_deducted", "1", o.deducted.fiber_fraction());
  if (o.rads) {
    t.add("rads_fraction_diseased", "1", o.rads->fraction_diseased());
    t.add("rads_lambda_par_diseased", "um^2/ms", o.rads->chosen.lambda_par);
    t.add("rads_average_axial_adc", "um^2/ms", o.rads->average_axial_adc());
  }
}

inline void add_walk_metrics(MetricTable& t, const SpinEnsemble& e, std::optional<Compartment> walked) {
  for (Compartment c : kAllCompartments) {
    if (walked && c != *walked) continue;
    const auto n = detail::spins_in(e, c).size();
    if (n == 0) continue;
    const DisplacementTensor d = displacement_tensor(e, e.elapsed(), c);
    const std::string p = fmt::format("D_{}_", to_string(c));
    t.add(p + "x", "um^2/ms", d.per_axis.x());
    t.add(p + "y", "um^2/ms", d.per_axis.y());
    t.add(p + "z", "um^2/ms", d.per_axis.z());
  }
  t.add("rejected_step_fraction", "1",
        static_cast<double>(e.rejected_steps) / (static_cast<double>(e.size()) * static_cast<double>(e.steps_taken)));
}

inline void write_displacement_csv(const std::filesystem::path& path, const SpinEnsemble& e) {
  std::string t = "compartment,spins,Dx_um2_per_ms,Dy_um2_per_ms,Dz_um2_per_ms,eig1_um2_per_ms,eig2_um2_per_ms,"
                  "eig3_um2_per_ms\n";
  for (Compartment c : kAllCompartments) {
    if (detail::spins_in(e, c).empty()) continue;
    const DisplacementTensor d = displacement_tensor(e, e.elapsed(), c);
    t += fmt::format("{},{},{},{},{},{},{},{}\n", to_string(c), d.count, d.per_axis.x(), d.per_axis.y(),
                     d.per_axis.z(), d.eigenvalues[0], d.eigenvalues[1], d.eigenvalues[2]);
  }
  io::write_text(path, t);
}

inline HealthSummary summarize_health(std::vector<HealthPoint> points, double d_diseased) {
  HealthSummary h;
  h.points = std::move(points);
  std::vector<double> tp, pp, ta, pa;
  double rel = 0.0;
  std::size_t n_rel = 0;
  for (const auto& p : h.points) {
    tp.push_back(p.true_diseased);
    pp.push_back(p.predicted_diseased);
    ta.push_back(p.true_axial_adc);
    pa.push_back(p.predicted_axial_adc);
    if (p.true_diseased > 0.0) {
      rel += std::abs(p.lambda_par_diseased - d_diseased) / d_diseased;
      ++n_rel;
    }
  }
  h.proportion_rmse = stats::rmse(pp, tp);
  h.lambda_par_relative_error = n_rel ? rel / static_cast<double>(n_rel) : 0.0;
  try {
    h.proportion_r = stats::pearson_r(tp, pp);
  } catch (const Error& e) {
    h.notes.push_back(std::string("proportion correlation: ") + e.what());
  }
  try {
    h.axial_r = stats::pearson_r(ta, pa);
  } catch (const Error& e) {
    h.notes.push_back(std::string("axial ADC correlation: ") + e.what());
  }
  return h;
}

inline Json metric_json(const MetricSummary& m) {
  Json j;
  j["name"] = m.name;
  j["unit"] = m.unit;
  j["values"] = m.values;
  if (m.reference) j["reference"] = *m.reference;
  if (m.t) {
    j["mean"] = m.t->mean;
    j["sd"] = m.t->sd;
    j["ci95"] = {m.t->ci_low, m.t->ci_high};
    if (m.reference) {
      j["t"] = m.t->t;
      j["p"] = m.t->p;
      j["zero_variance"] = m.t->zero_variance;
    }
  } else {
    j["mean"] = m.values.front();
  }
  return j;
}

}  // namespace detail

inline Json report_json(const StatsReport& r) {
  Json j;
  j["experiment"] = std::string(to_string(r.experiment));
  j["replicates"] = r.replicates;
  Json metrics = Json::array();
  for (const auto& m : r.metrics) metrics.push_back(detail::metric_json(m));
  j["metrics"] = metrics;
  if (r.health) {
    Json h;
    Json pts = Json::array();
    for (const auto& p : r.health->points)
      pts.push_back({{"replicate", p.replicate},
                     {"true_diseased", p.true_diseased},
                     {"predicted_diseased", p.predicted_diseased},
                     {"lambda_par_diseased", p.lambda_par_diseased},
                     {"true_axial_adc", p.true_axial_adc},
                     {"predicted_axial_adc", p.predicted_axial_adc}});
    h["points"] = pts;
    if (r.health->proportion_r)
      h["proportion_pearson"] = {{"r", r.health->proportion_r->r}, {"p", r.health->proportion_r->p}};
    if (r.health->axial_r) h["axial_adc_pearson"] = {{"r", r.health->axial_r->r}, {"p", r.health->axial_r->p}};
    h["proportion_rmse"] = r.health->proportion_rmse;
    h["lambda_par_relative_error"] = r.health->lambda_par_relative_error;
    h["notes"] = r.health->notes;
    j["health"] = h;
  }
  j["notes"] = r.notes;
  return j;
}

inline std::string summary_csv(const StatsReport& r) {
  std::string t = "metric,unit,n,mean,sd,ci95_low,ci95_high,reference,p\n";
  for (const auto& m : r.metrics) {
    if (m.t) {
      t += fmt::format("{},{},{},{},{},{},{},{},{}\n", m.name, m.unit, m.values.size(), m.t->mean, m.t->sd,
                       m.t->ci_low, m.t->ci_high, m.reference ? fmt::format("{}", *m.reference) : "",
                       m.reference ? fmt::format("{}", m.t->p) : "");
    } else {
      t += fmt::format("{},{},{},{},,,,{},\n", m.name, m.unit, m.values.size(), m.values.front(),
                       m.reference ? fmt::format("{}", *m.reference) : "");
    }
  }
  return t;
}

/// Runs every replicate of the configured experiment and writes its artifacts
/// under `cfg.out_dir`. Replicate r uses seed walk.seed + r.
inline StatsReport run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  io::write_json(out / "config.json", config_to_json(cfg));

  const VoxelGeometry g = experiment_geometry(cfg);
  const GradientScheme scheme = build_scheme(cfg.scheme);
  const VolumeFractions truth = g.volume_fractions();
  io::write_scheme_csv(out / "scheme.csv", scheme);
  io::write_json(out / "geometry.json", {{"side_um", g.side()},
                                         {"fibers", g.fiber_count()},
                                         {"cells", g.cell_count()},
                                         {"fiber_fraction", truth.fiber},
                                         {"cell_fraction", truth.cell},
                                         {"free_fraction", truth.free}});

  StatsReport report;
  report.experiment = cfg.experiment;
  report.replicates = cfg.replicates;
  detail::MetricTable table;
  const bool compartment_run =
      cfg.experiment == Experiment::kFiberOnly || cfg.experiment == Experiment::kCellOnly;

  if (cfg.experiment == Experiment::kAxonalHealth) {
    ExperimentConfig hc = cfg;
    if (!hc.walk.health_mix) hc.walk.health_mix = HealthMix{1.0, cfg.walk.d_ia, 1.0};
    if (!g.has_fibers()) throw Error(ErrorCode::kConfig, "axonal-health needs fibers");
    const double d_dis = hc.walk.health_mix->d_diseased;
    const double d_healthy = hc.walk.health_mix->d_healthy;
    std::vector<HealthPoint> points;
    for (std::size_t r = 0; r < cfg.replicates; ++r) {
      const WalkConfig w = experiment_walk(hc, r);
      const auto series = simulate_health_series(g, w, scheme, cfg.rads.health_fractions);
      for (std::size_t m = 0; m < series.size(); ++m) {
        const SpinEnsemble& e = series[m];
        const fs::path dir = out / fmt::format("rep_{:02d}", r) / ("healthy_" + detail::pct_label(cfg.rads.health_fractions[m]));
        const SignalVector sig = experiment_signal(hc, e, scheme);
        const FitOutcome o = fit_pipeline(sig.s, scheme, cfg.fit, experiment_deduction(hc));
        const std::string title =
            fmt::format("replicate {}, {}% healthy", r, detail::pct_label(cfg.rads.health_fractions[m]));
        detail::write_signal_artifacts(dir, title, scheme, sig);
        detail::write_fit_artifacts(dir, title, o);
        detail::write_displacement_csv(dir / "displacement.csv", e);
        if (!o.rads) throw Error(ErrorCode::kInsufficientMass, "no anisotropic mass for the RADS fit");
        // The realized proportion: fibers are assigned to health states by a seeded draw.
        std::size_t healthy_fibers = 0;
        for (auto h : e.fiber_healthy) healthy_fibers += h;
        const double true_dis = 1.0 - static_cast<double>(healthy_fibers) / static_cast<double>(e.fiber_healthy.size());
        HealthPoint p;
        p.replicate = r;
        p.true_diseased = true_dis;
        p.predicted_diseased = o.rads->fraction_diseased();
        p.lambda_par_diseased = o.rads->chosen.lambda_par;
        p.true_axial_adc = true_dis * d_dis + (1.0 - true_dis) * d_healthy;
        p.predicted_axial_adc = o.rads->average_axial_adc();
        points.push_back(p);
        table.add("predicted_diseased_" + detail::pct_label(cfg.rads.health_fractions[m]), "1", p.predicted_diseased,
                  true_dis);
      }
    }
    report.health = detail::summarize_health(points, d_dis);
    std::string t = "replicate,true_diseased,predicted_diseased,lambda_par_diseased_um2_per_ms,"
                    "true_axial_adc_um2_per_ms,predicted_axial_adc_um2_per_ms\n";
    io::Series truth_line{"ideal", {0.0, 1.0}, {0.0, 1.0}}, fitted{"RADS", {}, {}};
    for (const auto& p : report.health->points) {
      t += fmt::format("{},{},{},{},{},{}\n", p.replicate, p.true_diseased, p.predicted_diseased,
                       p.lambda_par_diseased, p.true_axial_adc, p.predicted_axial_adc);
      fitted.x.push_back(p.true_diseased);
      fitted.y.push_back(p.predicted_diseased);
    }
    io::write_text(out / "health.csv", t);
    io::write_text(out / "health.svg", io::line_chart_svg("Diseased axon proportion", "true", "predicted",
                                                           {truth_line, fitted}));
  } else {
    for (std::size_t r = 0; r < cfg.replicates; ++r) {
      const fs::path dir = out / fmt::format("rep_{:02d}", r);
      const WalkConfig w = experiment_walk(cfg, r);
      const SpinEnsemble e = simulate(g, w, scheme);
      const SignalVector sig = experiment_signal(cfg, e, scheme);
      const FitOutcome o = fit_pipeline(sig.s, scheme, cfg.fit, experiment_deduction(cfg));
      const std::string title = fmt::format("{} replicate {}", to_string(cfg.experiment), r);
      detail::write_signal_artifacts(dir, title, scheme, sig);
      detail::write_fit_artifacts(dir, title, o);
      detail::write_displacement_csv(dir / "displacement.csv", e);
      if (!e.trajectory.empty()) io::write_trajectory(dir / "trajectory.bin", e.trajectory);
      detail::add_fit_metrics(table, o, truth, compartment_run);
      detail::add_walk_metrics(table, e, w.walk_only);

      if (cfg.experiment == Experiment::kFiberOnly) {
        // Perpendicular acquisitions reduce the anisotropic term to exp(-b lambda_perp).
        const Vec3 fd = cfg.fit.fiber_direction.normalized();
        const auto [sub, s_sub] = select_acquisitions(
            scheme, sig.s, [&](const PgseAcquisition& a) { return std::abs(a.direction.dot(fd)) < 1e-9; });
        if (sub.size() > 1) {
          const AdcSpectrum adc = fit_adc_spectrum(s_sub, sub, cfg.fit.grid().iso_d, cfg.fit.options.beta);
          io::write_adc_spectrum_csv(dir / "adc_spectrum_perpendicular.csv", adc);
          table.add("perpendicular_mass_below_0.2", "1", adc.mass_below(0.2));
        }
        std::size_t best = scheme.size();
        for (std::size_t k = 0; k < scheme.size(); ++k)
          if (std::abs(scheme[k].direction.dot(fd)) < 1e-9 &&
              (best == scheme.size() || scheme[k].b > scheme[best].b))
            best = k;
        if (best < scheme.size()) table.add("perpendicular_signal_at_bmax", "1", sig.s[best]);
      }
    }
  }

  report.metrics = table.finish();
  if (compartment_run)
    report.notes.push_back("compartment signal scaled by the compartment's spin share; s(b=0) is that share");
  io::write_json(out / "summary.json", report_json(report));
  io::write_text(out / "summary.csv", summary_csv(report));
  return report;
}

/// Geometry, walk and signal only, for every replicate.
inline void run_simulation(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  io::write_json(out / "config.json", config_to_json(cfg));
  const VoxelGeometry g = experiment_geometry(cfg);
  const GradientScheme scheme = build_scheme(cfg.scheme);
  io::write_scheme_csv(out / "scheme.csv", scheme);
  for (std::size_t r = 0; r < cfg.replicates; ++r) {
    const fs::path dir = out / fmt::format("rep_{:02d}", r);
    const SpinEnsemble e = simulate(g, experiment_walk(cfg, r), scheme);
    detail::write_signal_artifacts(dir, fmt::format("replicate {}", r), scheme, experiment_signal(cfg, e, scheme));
    detail::write_displacement_csv(dir / "displacement.csv", e);
    if (!e.trajectory.empty()) io::write_trajectory(dir / "trajectory.bin", e.trajectory);
  }
}

/// Stage one, deduction and RADS on a stored signal file.
inline FitOutcome run_fit(const std::filesystem::path& signal_file, const ExperimentConfig& cfg) {
  const io::SignalFile f = io::read_signal_csv(signal_file);
  const FitOutcome o = fit_pipeline(f.s, f.scheme, cfg.fit, cfg.fit.options.eaec_deduction);
  detail::write_fit_artifacts(cfg.out_dir, signal_file.filename().string(), o);
  Json j = {{"fiber_fraction", o.fit.fiber_fraction()},
            {"cell_fraction", o.fit.cell_fraction()},
            {"free_fraction", o.fit.free_fraction()},
            {"lambda_perp", o.fit.lambda_perp},
            {"fiber_fraction_deducted", o.deducted.fiber_fraction()}};
  io::write_json(cfg.out_dir / "fit_summary.json", j);
  return o;
}

/// Machine-readable failure record.
inline Json error_record(const std::string& code, const std::string& message) {
  return {{"status", "error"}, {"code", code}, {"message", message}};
}

}  // namespace radsim
