#pragma once

#include "radsim/geometry.hpp"
#include "radsim/sequence.hpp"
#include "radsim/spectrafit.hpp"
#include "radsim/walker.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

extern char** environ;

namespace radsim {

using Json = nlohmann::ordered_json;

enum class Experiment { kFiberOnly, kCellOnly, kFreeOnly, kFullStructure, kAxonalHealth };

inline std::string_view to_string(Experiment e) {
  switch (e) {
    case Experiment::kFiberOnly: return "fiber-only";
    case Experiment::kCellOnly: return "cell-only";
    case Experiment::kFreeOnly: return "free-only";
    case Experiment::kFullStructure: return "full-structure";
    case Experiment::kAxonalHealth: return "axonal-health";
  }
  return "unknown";
}

inline Experiment parse_experiment(std::string_view name) {
  for (Experiment e : {Experiment::kFiberOnly, Experiment::kCellOnly, Experiment::kFreeOnly,
                       Experiment::kFullStructure, Experiment::kAxonalHealth})
    if (to_string(e) == name) return e;
  throw Error(ErrorCode::kConfig, "unknown experiment '" + std::string(name) + "'");
}

struct SchemeConfig {
  std::vector<Vec3> directions{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  std::size_t b_count = 25;
  double b_max_s_per_mm2 = 3000.0;
  /// Explicit b-values (s/mm^2) replace b_count/b_max when given.
  std::vector<double> b_values_s_per_mm2;
  double delta_ms = 6.0;
  double Delta_ms = 18.0;
  /// Scheme CSV; replaces every other key when set.
  std::optional<std::filesystem::path> file;
};

struct FitConfig {
  std::size_t n1 = 31;
  std::size_t n2 = 31;
  double lambda_perp_max = 0.4;  // um^2/ms
  std::size_t n_perp = 9;
  Vec3 fiber_direction = Vec3::UnitZ();
  FitOptions options;

  BasisGrid grid() const { return BasisGrid::uniform(n1, n2, lambda_perp_max, n_perp, fiber_direction); }
};

enum class RadsSource { kFull, kIntraAxonal };

struct RadsConfig {
  std::vector<double> health_fractions{1.0, 0.7, 0.5, 0.3};
  /// kFull fits the voxel signal; kIntraAxonal fits the intra-axonal signal alone.
  RadsSource source = RadsSource::kFull;
};

struct ExperimentConfig {
  Experiment experiment = Experiment::kFullStructure;
  GeometryConfig geometry;
  WalkConfig walk;
  SchemeConfig scheme;
  FitConfig fit;
  RadsConfig rads;
  std::filesystem::path out_dir = "out";
  std::size_t replicates = 3;
};

enum class Profile { kDesk, kPaper };

inline Profile parse_profile(std::string_view name) {
  if (name == "desk") return Profile::kDesk;
  if (name == "paper") return Profile::kPaper;
  throw Error(ErrorCode::kConfig, "profile must be desk or paper");
}

namespace detail {

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

/// Reads the keys of one block, rejecting any it does not know.
class BlockReader {
 public:
  BlockReader(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw Error(ErrorCode::kConfig, name_ + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <class T>
  void read(const char* key, T& out) {
    seen_.emplace_back(key);
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kConfig, name_ + "." + key + ": " + e.what());
    }
  }

  void vec3(const char* key, Vec3& out) {
    std::vector<double> v;
    read(key, v);
    if (!has(key)) return;
    if (v.size() != 3) throw Error(ErrorCode::kConfig, name_ + "." + key + " needs three components");
    out = Vec3(v[0], v[1], v[2]);
  }

  void mark(const char* key) { seen_.emplace_back(key); }

  const Json& block(const char* key) {
    seen_.emplace_back(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end())
        throw Error(ErrorCode::kConfig, "unknown key " + name_ + "." + key);
  }

 private:
  const Json& j_;
  std::string name_;
  std::vector<std::string> seen_;
};

inline void read_geometry(const Json& j, GeometryConfig& g) {
  BlockReader r(j, "geometry");
  r.read("side_um", g.side_um);
  bool fibers = true, cells = true;
  r.read("fibers", fibers);
  r.read("cells", cells);
  FiberSpec f = g.fibers.value_or(FiberSpec{});
  r.read("fiber_radius_um", f.radius_um);
  r.read("fiber_pitch_um", f.pitch_um);
  g.fibers = fibers ? std::optional<FiberSpec>(f) : std::nullopt;

  CellSpec c = g.cells.value_or(CellSpec{});
  r.read("cell_radius_um", c.radius_um);
  if (r.has("cell_fraction_target") && r.has("cell_pitch_um"))
    throw Error(ErrorCode::kConfig, "geometry takes cell_fraction_target or cell_pitch_um, not both");
  if (r.has("cell_fraction_target")) {
    double v = 0.0;
    r.read("cell_fraction_target", v);
    c.fraction_target = v;
    c.pitch_um.reset();
  } else {
    r.mark("cell_fraction_target");
  }
  if (r.has("cell_pitch_um")) {
    double v = 0.0;
    r.read("cell_pitch_um", v);
    c.pitch_um = v;
    c.fraction_target.reset();
  } else {
    r.mark("cell_pitch_um");
  }
  g.cells = cells ? std::optional<CellSpec>(c) : std::nullopt;
  r.finish();
}

inline void read_walk(const Json& j, WalkConfig& w) {
  BlockReader r(j, "walk");
  r.read("n_spins", w.n_spins);
  double timestep_us = w.timestep_ms * 1e3;
  r.read("timestep_us", timestep_us);
  w.timestep_ms = timestep_us * 1e-3;
  if (r.has("n_steps")) {
    std::size_t n = 0;
    r.read("n_steps", n);
    w.n_steps = n;
  } else {
    r.mark("n_steps");
  }
  r.read("seed", w.seed);
  r.read("D_IA", w.d_ia);
  r.read("D_ICEA", w.d_icea);
  r.read("D_EAEC", w.d_eaec);
  r.read("threads", w.threads);
  if (r.has("health_mix")) {
    BlockReader h(r.block("health_mix"), "walk.health_mix");
    HealthMix m = w.health_mix.value_or(HealthMix{});
    h.read("fraction_healthy", m.fraction_healthy);
    h.read("D_healthy", m.d_healthy);
    h.read("D_diseased", m.d_diseased);
    h.finish();
    w.health_mix = m;
  } else {
    r.mark("health_mix");
  }
  if (r.has("trajectory")) {
    BlockReader t(r.block("trajectory"), "walk.trajectory");
    TrajectoryOptions o = w.trajectory.value_or(TrajectoryOptions{});
    t.read("spins", o.spins);
    t.read("stride", o.stride);
    t.finish();
    w.trajectory = o;
  } else {
    r.mark("trajectory");
  }
  r.finish();
}

inline void read_scheme(const Json& j, SchemeConfig& s) {
  BlockReader r(j, "scheme");
  if (r.has("directions")) {
    std::vector<std::vector<double>> dirs;
    r.read("directions", dirs);
    s.directions.clear();
    for (const auto& d : dirs) {
      if (d.size() != 3) throw Error(ErrorCode::kConfig, "scheme.directions entries need three components");
      s.directions.emplace_back(d[0], d[1], d[2]);
    }
  } else {
    r.mark("directions");
  }
  r.read("b_count", s.b_count);
  r.read("b_max_s_per_mm2", s.b_max_s_per_mm2);
  r.read("b_values_s_per_mm2", s.b_values_s_per_mm2);
  r.read("delta_ms", s.delta_ms);
  r.read("Delta_ms", s.Delta_ms);
  if (r.has("file")) {
    std::string f;
    r.read("file", f);
    s.file = f;
  } else {
    r.mark("file");
  }
  r.finish();
}

inline void read_fit(const Json& j, FitConfig& f) {
  BlockReader r(j, "fit");
  r.read("n1", f.n1);
  r.read("n2", f.n2);
  r.read("lambda_perp_max", f.lambda_perp_max);
  r.read("n_perp", f.n_perp);
  r.vec3("fiber_direction", f.fiber_direction);
  r.read("beta", f.options.beta);
  r.read("eaec_deduction", f.options.eaec_deduction);
  r.read("d_cell_cut", f.options.d_cell_cut);
  r.read("over_subtraction_tol", f.options.over_subtraction_tol);
  r.read("threads", f.options.threads);
  r.finish();
}

inline void read_rads(const Json& j, RadsConfig& c) {
  BlockReader r(j, "rads");
  r.read("health_fractions", c.health_fractions);
  std::string source = c.source == RadsSource::kFull ? "full" : "intra-axonal";
  r.read("source", source);
  if (source == "full")
    c.source = RadsSource::kFull;
  else if (source == "intra-axonal")
    c.source = RadsSource::kIntraAxonal;
  else
    throw Error(ErrorCode::kConfig, "rads.source must be full or intra-axonal");
  r.finish();
}

/// Walks `path` into `root`, matching existing keys case-insensitively and
/// creating objects as needed.
inline Json& json_at(Json& root, const std::vector<std::string>& path) {
  Json* node = &root;
  for (const std::string& part : path) {
    if (!node->is_object()) *node = Json::object();
    std::string key = part;
    for (const auto& [k, v] : node->items())
      if (lower(k) == part) key = k;
    node = &(*node)[key];
  }
  return *node;
}

inline Json parse_scalar(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return Json(text);
  }
}

}  // namespace detail

/// Configuration grammar: a JSON object with optional blocks
///
///   experiment  : "fiber-only" | "cell-only" | "free-only" | "full-structure" | "axonal-health"
///   replicates  : integer >= 1
///   out_dir     : path
///   threads     : integer, sets walk.threads and fit.threads (0 = all cores)
///   geometry    : { side_um, fibers, fiber_radius_um, fiber_pitch_um, cells, cell_radius_um,
///                   cell_fraction_target | cell_pitch_um }
///   walk        : { n_spins, timestep_us, n_steps, seed, D_IA, D_ICEA, D_EAEC, threads,
///                   health_mix { fraction_healthy, D_healthy, D_diseased },
///                   trajectory { spins, stride } }
///   scheme      : { directions [[x,y,z],...], b_count, b_max_s_per_mm2, b_values_s_per_mm2,
///                   delta_ms, Delta_ms, file }
///   fit         : { n1, n2, lambda_perp_max, n_perp, fiber_direction, beta, eaec_deduction,
///                   d_cell_cut, over_subtraction_tol, threads }
///   rads        : { health_fractions, source: "full" | "intra-axonal" }
///
/// Diffusivities are in um^2/ms. Unknown keys are an error.
inline ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  detail::BlockReader r(j, "config");
  std::string name(to_string(c.experiment));
  r.read("experiment", name);
  c.experiment = parse_experiment(name);
  r.read("replicates", c.replicates);
  std::string out = c.out_dir.string();
  r.read("out_dir", out);
  c.out_dir = out;
  if (r.has("threads")) {
    unsigned t = 0;
    r.read("threads", t);
    c.walk.threads = t;
    c.fit.options.threads = t;
  } else {
    r.mark("threads");
  }
  if (r.has("geometry")) detail::read_geometry(r.block("geometry"), c.geometry); else r.mark("geometry");
  if (r.has("walk")) detail::read_walk(r.block("walk"), c.walk); else r.mark("walk");
  if (r.has("scheme")) detail::read_scheme(r.block("scheme"), c.scheme); else r.mark("scheme");
  if (r.has("fit")) detail::read_fit(r.block("fit"), c.fit); else r.mark("fit");
  if (r.has("rads")) detail::read_rads(r.block("rads"), c.rads); else r.mark("rads");
  r.finish();
  if (c.replicates < 1) throw Error(ErrorCode::kConfig, "replicates must be at least 1");
  if (c.walk.n_spins < 1) throw Error(ErrorCode::kConfig, "walk.n_spins must be at least 1");
  if (!(c.walk.timestep_ms > 0.0)) throw Error(ErrorCode::kConfig, "walk.timestep_us must be positive");
  return c;
}

/// Applies RADSIM_* environment variables: a double underscore separates
/// nesting levels, so RADSIM_WALK__N_SPINS=2000 sets walk.n_spins. Values are
/// parsed as JSON when possible and taken as strings otherwise.
inline void apply_env_overrides(Json& j, char** env = environ) {
  constexpr std::string_view kPrefix = "RADSIM_";
  std::vector<std::pair<std::string, std::string>> vars;
  for (char** e = env; e && *e; ++e) {
    const std::string_view entry(*e);
    if (entry.substr(0, kPrefix.size()) != kPrefix) continue;
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) continue;
    vars.emplace_back(std::string(entry.substr(kPrefix.size(), eq - kPrefix.size())), std::string(entry.substr(eq + 1)));
  }
  std::sort(vars.begin(), vars.end());
  for (const auto& [name, value] : vars) {
    std::vector<std::string> path;
    std::size_t start = 0;
    while (true) {
      const auto sep = name.find("__", start);
      path.push_back(detail::lower(name.substr(start, sep - start)));
      if (sep == std::string::npos) break;
      start = sep + 2;
    }
    if (path.empty() || path.front().empty()) continue;
    detail::json_at(j, path) = detail::parse_scalar(value);
  }
}

inline void apply_profile(Json& j, Profile p) {
  j["walk"]["n_spins"] = p == Profile::kPaper ? 1000000 : 100000;
  j["replicates"] = p == Profile::kPaper ? 10 : 3;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return Json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
}

/// File, then profile, then environment. Relative scheme files resolve against
/// the config file's directory.
inline ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                                    std::optional<Profile> profile = std::nullopt) {
  Json j = path ? read_json_file(*path) : Json::object();
  if (profile) apply_profile(j, *profile);
  apply_env_overrides(j);
  ExperimentConfig c = config_from_json(j);
  if (path && c.scheme.file && c.scheme.file->is_relative())
    c.scheme.file = path->parent_path() / *c.scheme.file;
  return c;
}

/// The fully resolved configuration, written next to the results. The output
/// directory is left out so that identical runs write identical files.
inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["experiment"] = std::string(to_string(c.experiment));
  j["replicates"] = c.replicates;

  Json g;
  g["side_um"] = c.geometry.side_um;
  g["fibers"] = c.geometry.fibers.has_value();
  if (c.geometry.fibers) {
    g["fiber_radius_um"] = c.geometry.fibers->radius_um;
    g["fiber_pitch_um"] = c.geometry.fibers->pitch_um;
  }
  g["cells"] = c.geometry.cells.has_value();
  if (c.geometry.cells) {
    g["cell_radius_um"] = c.geometry.cells->radius_um;
    if (c.geometry.cells->fraction_target) g["cell_fraction_target"] = *c.geometry.cells->fraction_target;
    if (c.geometry.cells->pitch_um) g["cell_pitch_um"] = *c.geometry.cells->pitch_um;
  }
  j["geometry"] = g;

  Json w;
  w["n_spins"] = c.walk.n_spins;
  w["timestep_us"] = c.walk.timestep_ms * 1e3;
  if (c.walk.n_steps) w["n_steps"] = *c.walk.n_steps;
  w["seed"] = c.walk.seed;
  w["D_IA"] = c.walk.d_ia;
  w["D_ICEA"] = c.walk.d_icea;
  w["D_EAEC"] = c.walk.d_eaec;
  if (c.walk.health_mix)
    w["health_mix"] = {{"fraction_healthy", c.walk.health_mix->fraction_healthy},
                       {"D_healthy", c.walk.health_mix->d_healthy},
                       {"D_diseased", c.walk.health_mix->d_diseased}};
  if (c.walk.trajectory) w["trajectory"] = {{"spins", c.walk.trajectory->spins}, {"stride", c.walk.trajectory->stride}};
  j["walk"] = w;

  Json s;
  if (c.scheme.file) {
    s["file"] = c.scheme.file->string();
  } else {
    Json dirs = Json::array();
    for (const Vec3& d : c.scheme.directions) dirs.push_back({d.x(), d.y(), d.z()});
    s["directions"] = dirs;
    if (c.scheme.b_values_s_per_mm2.empty()) {
      s["b_count"] = c.scheme.b_count;
      s["b_max_s_per_mm2"] = c.scheme.b_max_s_per_mm2;
    } else {
      s["b_values_s_per_mm2"] = c.scheme.b_values_s_per_mm2;
    }
    s["delta_ms"] = c.scheme.delta_ms;
    s["Delta_ms"] = c.scheme.Delta_ms;
  }
  j["scheme"] = s;

  const Vec3& fd = c.fit.fiber_direction;
  j["fit"] = {{"n1", c.fit.n1},
              {"n2", c.fit.n2},
              {"lambda_perp_max", c.fit.lambda_perp_max},
              {"n_perp", c.fit.n_perp},
              {"fiber_direction", {fd.x(), fd.y(), fd.z()}},
              {"beta", c.fit.options.beta},
              {"eaec_deduction", c.fit.options.eaec_deduction},
              {"d_cell_cut", c.fit.options.d_cell_cut},
              {"over_subtraction_tol", c.fit.options.over_subtraction_tol}};
  j["rads"] = {{"health_fractions", c.rads.health_fractions},
               {"source", c.rads.source == RadsSource::kFull ? "full" : "intra-axonal"}};
  return j;
}

}  // namespace radsim
