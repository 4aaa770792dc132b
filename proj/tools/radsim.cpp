#include "radsim/acceptance.hpp"
#include "radsim/harness.hpp"

#include "CLI11.hpp"

#include <fmt/format.h>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string profile;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--seed", c.seed, "master seed; replicate r uses seed + r");
  cmd->add_option("--profile", c.profile, "desk (1e5 spins, 3 replicates) or paper (1e6 spins, 10 replicates)")
      ->check(CLI::IsMember({"desk", "paper"}));
}

radsim::ExperimentConfig resolve(const Common& c) {
  std::optional<std::filesystem::path> path;
  if (!c.config.empty()) path = c.config;
  std::optional<radsim::Profile> profile;
  if (!c.profile.empty()) profile = radsim::parse_profile(c.profile);
  radsim::ExperimentConfig cfg = radsim::load_config(path, profile);
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (c.seed) cfg.walk.seed = *c.seed;
  return cfg;
}

int fail(const std::filesystem::path& out, const std::string& code, const std::string& message) {
  const auto record = radsim::error_record(code, message);
  std::cerr << record.dump() << "\n";
  try {
    if (!out.empty()) radsim::io::write_json(out / "error.json", record);
  } catch (...) {
  }
  return 2;
}

void print_report(const radsim::StatsReport& r) {
  fmt::print("{} x {} replicates\n", radsim::to_string(r.experiment), r.replicates);
  for (const auto& m : r.metrics) {
    if (m.t)
      fmt::print("  {:<34} {:>10.5f}  95% CI [{:.5f}, {:.5f}] {}\n", m.name, m.t->mean, m.t->ci_low, m.t->ci_high,
                 m.unit);
    else
      fmt::print("  {:<34} {:>10.5f}  {}\n", m.name, m.values.front(), m.unit);
  }
  if (r.health) {
    const auto& h = *r.health;
    if (h.proportion_r) fmt::print("  proportion r = {:.4f} (p = {:.3g})\n", h.proportion_r->r, h.proportion_r->p);
    if (h.axial_r) fmt::print("  axial ADC r = {:.4f} (p = {:.3g})\n", h.axial_r->r, h.axial_r->p);
    fmt::print("  proportion RMSE = {:.4f}, lambda_par relative error = {:.4f}\n", h.proportion_rmse,
               h.lambda_par_relative_error);
    for (const auto& n : h.notes) fmt::print("  note: {}\n", n);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo diffusion MRI simulation and restricted anisotropic spectrum fitting"};
  app.require_subcommand(1);

  Common sim_opts, fit_opts, run_opts;
  auto* sim = app.add_subcommand("simulate", "geometry, walk and signal only");
  add_common(sim, sim_opts);

  auto* fit = app.add_subcommand("fit", "spectrum and RADS fit of a signal CSV");
  add_common(fit, fit_opts);
  std::string signal_file;
  fit->add_option("--signal", signal_file, "signal CSV written by simulate or run")->required();

  auto* run = app.add_subcommand("run", "full experiment pipeline");
  add_common(run, run_opts);

  auto* validate = app.add_subcommand("validate", "built-in acceptance suite");
  radsim::acceptance::Options acc;
  std::string scratch = "acceptance_scratch";
  validate->add_option("--spins", acc.n_spins, "spins per walk");
  validate->add_option("--replicates", acc.replicates, "full-structure replicates");
  validate->add_option("--seed", acc.seed, "master seed");
  validate->add_option("--threads", acc.threads, "worker threads (0 = all cores)");
  validate->add_option("--scratch", scratch, "directory for determinism runs");
  validate->add_option("--only", acc.only, "criterion groups to run (C1 C2 C3 C6 C7 C8)")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  std::filesystem::path out;
  try {
    if (*validate) {
      acc.scratch = scratch;
      acc.on_result = [](const radsim::acceptance::Result& r) {
        fmt::print("{}\n", radsim::acceptance::format_line(r));
        std::fflush(stdout);
      };
      radsim::acceptance::Suite suite(acc);
      suite.run();
      return suite.all_passed() ? 0 : 1;
    }
    const Common& c = *sim ? sim_opts : *fit ? fit_opts : run_opts;
    const radsim::ExperimentConfig cfg = resolve(c);
    out = cfg.out_dir;
    if (*sim) {
      radsim::run_simulation(cfg);
    } else if (*fit) {
      const auto o = radsim::run_fit(signal_file, cfg);
      fmt::print("fiber {:.4f} cell {:.4f} free {:.4f} lambda_perp {}\n", o.fit.fiber_fraction(),
                 o.fit.cell_fraction(), o.fit.free_fraction(), o.fit.lambda_perp);
      if (o.rads)
        fmt::print("diseased {:.4f} at lambda_par {} um^2/ms\n", o.rads->fraction_diseased(), o.rads->chosen.lambda_par);
    } else {
      print_report(radsim::run_experiment(cfg));
    }
  } catch (const radsim::Error& e) {
    return fail(out, std::string(radsim::to_string(e.code())), e.what());
  } catch (const std::exception& e) {
    return fail(out, "internal", e.what());
  }
  return 0;
}
