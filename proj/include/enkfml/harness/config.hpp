#pragma once

// Experiment configuration and its INI-style text format:
//
//   [truth]       model, n_sites, forcing, dt, n_coarse, n_fine,
//                 time_scale_ratio, space_scale_ratio, coupling, spinup_steps
//   [surrogate]   stencil_radius, dt
//   [filter]      kind, known_model, ensemble_size, scheme, cl_form,
//                 adaptive_inflation, model_error_std, max_iterations,
//                 weight_tolerance, finite_difference_scale
//   [experiment]  update_interval, n_cycles, burn_in_cycles, obs_density,
//                 obs_error_std, sigma_a, state_spread_std, n_repeats,
//                 base_seed, divergence_rmse, abort_rmse
//   [grids]       inflation, half_length, zeta   (comma-separated lists)
//
// Unknown sections or keys are rejected.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "enkfml/dynamics.hpp"
#include "enkfml/errors.hpp"
#include "enkfml/filters_global.hpp"
#include "enkfml/filters_iterative.hpp"
#include "enkfml/filters_local.hpp"

namespace enkfml::harness {

enum class ModelKind { kL96, kL05III };
enum class FilterKind { kEnkfMl, kLensrfMl, kLetkfMl, kIenkfMl, kReferenceKnownModel };

inline std::string to_string(ModelKind m) { return m == ModelKind::kL96 ? "l96" : "l05iii"; }

inline std::string to_string(FilterKind f) {
  switch (f) {
    case FilterKind::kEnkfMl: return "enkf_ml";
    case FilterKind::kLensrfMl: return "lensrf_ml";
    case FilterKind::kLetkfMl: return "letkf_ml";
    case FilterKind::kIenkfMl: return "ienkf_ml";
    case FilterKind::kReferenceKnownModel: return "reference_known_model";
  }
  return "?";
}

inline ModelKind parse_model(const std::string& s) {
  if (s == "l96") return ModelKind::kL96;
  if (s == "l05iii" || s == "l05") return ModelKind::kL05III;
  throw ConfigError("unknown model '" + s + "' (expected l96 or l05iii)");
}

inline FilterKind parse_filter(const std::string& s) {
  for (auto f : {FilterKind::kEnkfMl, FilterKind::kLensrfMl, FilterKind::kLetkfMl,
                 FilterKind::kIenkfMl, FilterKind::kReferenceKnownModel})
    if (s == to_string(f)) return f;
  throw ConfigError("unknown filter kind '" + s + "'");
}

/// One point of the hyperparameter grid.
struct GridPoint {
  double inflation = 1.0;
  double half_length = 18.0;
  double zeta = 0.025;
};

struct ExperimentConfig {
  ModelKind model = ModelKind::kL96;
  dynamics::L96Config l96{};
  dynamics::L05Config l05{};
  std::int64_t truth_spinup_steps = 1000;

  int stencil_radius = 2;
  double surrogate_dt = 0.05;

  FilterKind filter = FilterKind::kEnkfMl;
  bool known_model = false;  // filter the true dynamics, no parameters
  int ensemble_size = 40;
  TransformScheme scheme = TransformScheme::kRightTransform;
  ClForm cl_form = ClForm::kDirect;
  bool adaptive_inflation = false;
  double model_error_std = 0.0;
  GaussNewtonConfig gauss_newton{};

  double update_interval = 0.05;
  std::int64_t n_cycles = 10000;
  std::int64_t burn_in_cycles = 2000;
  double obs_density = 1.0;
  double obs_error_std = 1.0;
  double sigma_a = 0.2;
  double state_spread_std = 1.0;
  int n_repeats = 5;
  std::uint64_t base_seed = 1;
  double divergence_rmse = 2.0;
  double abort_rmse = 20.0;

  std::vector<double> inflation_grid{1.0};
  std::vector<double> half_length_grid{18.0};
  std::vector<double> zeta_grid{};  // empty: 1/Nx

  /// Observed (slow) state dimension.
  Index nx() const { return model == ModelKind::kL96 ? l96.n_sites : l05.n_coarse; }
  double truth_dt() const { return model == ModelKind::kL96 ? l96.dt : l05.dt; }
  bool uses_known_model() const {
    return known_model || filter == FilterKind::kReferenceKnownModel;
  }
  Index n_obs() const {
    return std::max<Index>(1, static_cast<Index>(std::llround(obs_density * double(nx()))));
  }

  std::vector<double> zetas() const {
    return zeta_grid.empty() ? std::vector<double>{1.0 / double(nx())} : zeta_grid;
  }

  /// Cartesian product in canonical order (inflation, half_length, zeta).
  std::vector<GridPoint> grid() const {
    std::vector<GridPoint> out;
    for (double a : inflation_grid)
      for (double c : half_length_grid)
        for (double z : zetas()) out.push_back(GridPoint{a, c, z});
    return out;
  }

  GridPoint first_point() const { return grid().front(); }

  void validate() const {
    try {
      if (model == ModelKind::kL96) l96.validate(); else l05.validate();
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    if (truth_spinup_steps < 0) throw ConfigError("spinup_steps must be non-negative");
    if (stencil_radius < 0) throw ConfigError("stencil_radius must be non-negative");
    if (2 * stencil_radius + 1 > nx()) throw ConfigError("stencil wider than the ring");
    if (!(surrogate_dt > 0.0)) throw ConfigError("surrogate dt must be positive");
    if (ensemble_size < 2) throw ConfigError("ensemble_size must be >= 2");
    if (!(update_interval > 0.0)) throw ConfigError("update_interval must be positive");
    try {
      (void)surrogate::substeps_for(update_interval, truth_dt());
      if (!uses_known_model()) (void)surrogate::substeps_for(update_interval, surrogate_dt);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    if (n_cycles < 1 || burn_in_cycles < 0 || burn_in_cycles >= n_cycles)
      throw ConfigError("need 0 <= burn_in_cycles < n_cycles");
    if (!(obs_density > 0.0) || obs_density > 1.0)
      throw ConfigError("obs_density must lie in (0, 1]");
    if (!(obs_error_std > 0.0)) throw ConfigError("obs_error_std must be positive");
    if (sigma_a < 0.0 || !(state_spread_std >= 0.0))
      throw ConfigError("spreads must be non-negative");
    if (model_error_std < 0.0) throw ConfigError("model_error_std must be non-negative");
    if (n_repeats < 1) throw ConfigError("n_repeats must be >= 1");
    if (!(divergence_rmse > 0.0) || !(abort_rmse >= divergence_rmse))
      throw ConfigError("need 0 < divergence_rmse <= abort_rmse");
    if (adaptive_inflation && filter != FilterKind::kEnkfMl &&
        filter != FilterKind::kReferenceKnownModel)
      throw ConfigError("adaptive inflation is only available for global filters");
    try {
      gauss_newton.validate();
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    if (inflation_grid.empty() || half_length_grid.empty())
      throw ConfigError("grids must be non-empty");
    for (double a : inflation_grid)
      if (!(a >= 1.0)) throw ConfigError("inflation grid values must be >= 1");
    for (double c : half_length_grid)
      if (!(c > 0.0)) throw ConfigError("half_length grid values must be positive");
    for (double z : zetas())
      if (!(z >= 0.0) || z > 1.0) throw ConfigError("zeta grid values must lie in [0, 1]");
  }
};

namespace detail {

using Ptree = boost::property_tree::ptree;

inline const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"truth",
       {"model", "n_sites", "forcing", "dt", "n_coarse", "n_fine", "time_scale_ratio",
        "space_scale_ratio", "coupling", "spinup_steps"}},
      {"surrogate", {"stencil_radius", "dt"}},
      {"filter",
       {"kind", "known_model", "ensemble_size", "scheme", "cl_form", "adaptive_inflation",
        "model_error_std", "max_iterations", "weight_tolerance", "finite_difference_scale"}},
      {"experiment",
       {"update_interval", "n_cycles", "burn_in_cycles", "obs_density", "obs_error_std",
        "sigma_a", "state_spread_std", "n_repeats", "base_seed", "divergence_rmse",
        "abort_rmse"}},
      {"grids", {"inflation", "half_length", "zeta"}},
  };
  return keys;
}

inline void check_key(const std::string& section, const std::string& key) {
  const auto& keys = known_keys();
  const auto it = keys.find(section);
  if (it == keys.end()) throw ConfigError("unknown section [" + section + "]");
  if (!it->second.count(key)) throw ConfigError("unknown key " + section + "." + key);
}

template <class T>
T parse_scalar(const std::string& key, const std::string& text) {
  std::istringstream is(text);
  T value{};
  is >> value;
  if (is.fail() || !(is >> std::ws).eof())
    throw ConfigError("cannot parse " + key + " = '" + text + "'");
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("cannot parse " + key + " = '" + text + "' as a boolean");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(parse_scalar<double>(key, item.substr(b, e - b + 1)));
  }
  return out;
}

inline void apply(ExperimentConfig& c, const std::string& section, const std::string& key,
                  const std::string& v) {
  check_key(section, key);
  const std::string full = section + "." + key;
  auto num = [&](auto& field) { field = parse_scalar<std::decay_t<decltype(field)>>(full, v); };

  if (section == "truth") {
    if (key == "model") c.model = parse_model(v);
    else if (key == "n_sites") num(c.l96.n_sites);
    else if (key == "forcing") { num(c.l96.forcing); c.l05.forcing = c.l96.forcing; }
    else if (key == "dt") { num(c.l96.dt); c.l05.dt = c.l96.dt; }
    else if (key == "n_coarse") num(c.l05.n_coarse);
    else if (key == "n_fine") num(c.l05.n_fine);
    else if (key == "time_scale_ratio") num(c.l05.time_scale_ratio);
    else if (key == "space_scale_ratio") num(c.l05.space_scale_ratio);
    else if (key == "coupling") num(c.l05.coupling);
    else if (key == "spinup_steps") num(c.truth_spinup_steps);
  } else if (section == "surrogate") {
    if (key == "stencil_radius") num(c.stencil_radius);
    else if (key == "dt") num(c.surrogate_dt);
  } else if (section == "filter") {
    if (key == "kind") c.filter = parse_filter(v);
    else if (key == "known_model") c.known_model = parse_bool(full, v);
    else if (key == "ensemble_size") num(c.ensemble_size);
    else if (key == "scheme") {
      if (v == "etkf") c.scheme = TransformScheme::kRightTransform;
      else if (v == "ensrf") c.scheme = TransformScheme::kLeftTransform;
      else throw ConfigError("filter.scheme must be etkf or ensrf");
    } else if (key == "cl_form") {
      if (v == "direct") c.cl_form = ClForm::kDirect;
      else if (v == "obs_space") c.cl_form = ClForm::kObsSpace;
      else throw ConfigError("filter.cl_form must be direct or obs_space");
    } else if (key == "adaptive_inflation") c.adaptive_inflation = parse_bool(full, v);
    else if (key == "model_error_std") num(c.model_error_std);
    else if (key == "max_iterations") num(c.gauss_newton.max_iterations);
    else if (key == "weight_tolerance") num(c.gauss_newton.weight_tolerance);
    else if (key == "finite_difference_scale") num(c.gauss_newton.finite_difference_scale);
  } else if (section == "experiment") {
    if (key == "update_interval") num(c.update_interval);
    else if (key == "n_cycles") num(c.n_cycles);
    else if (key == "burn_in_cycles") num(c.burn_in_cycles);
    else if (key == "obs_density") num(c.obs_density);
    else if (key == "obs_error_std") num(c.obs_error_std);
    else if (key == "sigma_a") num(c.sigma_a);
    else if (key == "state_spread_std") num(c.state_spread_std);
    else if (key == "n_repeats") num(c.n_repeats);
    else if (key == "base_seed") num(c.base_seed);
    else if (key == "divergence_rmse") num(c.divergence_rmse);
    else if (key == "abort_rmse") num(c.abort_rmse);
  } else if (section == "grids") {
    auto list = parse_list(full, v);
    if (key == "inflation") c.inflation_grid = std::move(list);
    else if (key == "half_length") c.half_length_grid = std::move(list);
    else if (key == "zeta") c.zeta_grid = std::move(list);
  }
}

}  // namespace detail

/// Applies one "section.key=value" override.
inline void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override must look like section.key=value: '" + assignment + "'");
  detail::apply(cfg, assignment.substr(0, dot), assignment.substr(dot + 1, eq - dot - 1),
                assignment.substr(eq + 1));
}

inline ExperimentConfig parse_config(std::istream& is) {
  detail::Ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.message() + " (line " +
                      std::to_string(e.line()) + ")");
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("key '" + section + "' outside of any section");
    for (const auto& [key, value] : body) detail::apply(cfg, section, key, value.data());
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(is);
}

/// Full-length runs. Counts are analysis cycles for
/// both models.
inline void apply_paper_scale(ExperimentConfig& cfg) {
  switch (cfg.filter) {
    case FilterKind::kLensrfMl:
    case FilterKind::kLetkfMl:
      cfg.n_cycles = 15000;
      cfg.burn_in_cycles = 5000;
      cfg.n_repeats = 10;
      break;
    default:
      cfg.n_cycles = 60000;
      cfg.burn_in_cycles = 10000;
      cfg.n_repeats = 100;
      break;
  }
}

}  // namespace enkfml::harness
