// enkfml: command-line front end for twin experiments.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "enkfml.hpp"

using namespace enkfml;
using namespace enkfml::harness;

namespace {

/// Usage or configuration problem: exit status 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += (c == '\n') ? ' ' : c;
  }
  return out + "\"";
}

void report(const char* kind, const std::string& message) {
  std::cerr << "error: kind=" << kind << " message=" << quote(message) << '\n';
}

/// Output sink: a file, or stdout for "" and "-".
class Output {
 public:
  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") return;
    file_ = std::make_unique<std::ofstream>(path);
    if (!*file_) throw UsageError("cannot write '" + path + "'");
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

struct ConfigOptions {
  std::string path;
  std::vector<std::string> overrides;
  bool paper_scale = false;

  void attach(CLI::App* cmd, bool with_paper_scale) {
    cmd->add_option("-c,--config", path, "Experiment config file (INI)");
    cmd->add_option("--set", overrides, "Override as section.key=value")->take_all();
    if (with_paper_scale)
      cmd->add_flag("--paper-scale", paper_scale, "Use full-length runs");
  }

  ExperimentConfig load() const {
    ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
    if (paper_scale) apply_paper_scale(cfg);
    for (const auto& o : overrides) apply_override(cfg, o);
    cfg.validate();
    return cfg;
  }
};

// ---------------------------------------------------------------------------

struct TruthArgs {
  ConfigOptions config;
  std::string model;
  std::int64_t steps = 1000;
  std::int64_t stride = 1;
  std::uint64_t seed = 1;
  std::string output;
};

int cmd_truth(const TruthArgs& a) {
  ExperimentConfig cfg = a.config.load();
  if (!a.model.empty()) cfg.model = parse_model(a.model);
  Output out(a.output);
  if (cfg.model == ModelKind::kL96) {
    dynamics::write_trajectory_csv(
        dynamics::generate_truth(cfg.l96, std::nullopt, a.steps, cfg.truth_spinup_steps, a.seed,
                                 a.stride),
        out.stream());
  } else {
    dynamics::write_trajectory_csv(
        dynamics::generate_truth(cfg.l05, std::nullopt, a.steps, cfg.truth_spinup_steps, a.seed,
                                 a.stride),
        out.stream());
  }
  return 0;
}

struct RunArgs {
  ConfigOptions config;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t point_index = 0;
  std::string output, diagnostics, params;
};

int cmd_run(const RunArgs& a) {
  const ExperimentConfig cfg = a.config.load();
  const auto grid = cfg.grid();
  if (a.point_index >= grid.size())
    throw UsageError("--point-index out of range (grid has " + std::to_string(grid.size()) +
                     " points)");
  const std::uint64_t seed = a.seed_given ? a.seed : run_seed(cfg.base_seed, 0);
  RunOptions opt;
  opt.record_diagnostics = !a.diagnostics.empty();
  SweepResult single;
  single.runs.push_back(run_experiment(cfg, grid[a.point_index], seed, opt));
  const RunResult& r = single.runs.front();

  Output out(a.output);
  write_runs_csv(single, out.stream());
  if (!a.diagnostics.empty()) {
    Output diag(a.diagnostics);
    write_diagnostics_csv(r.diagnostics, cfg.filter == FilterKind::kIenkfMl, diag.stream());
  }
  if (!a.params.empty()) {
    if (r.final_params.size() == 0) throw UsageError("--params needs a surrogate run");
    const auto basis = surrogate::build_basis(cfg.stencil_radius);
    Output p(a.params);
    surrogate::write_params_csv(basis, surrogate::ParamVector(basis, r.final_params), p.stream());
  }
  if (r.diverged) std::cerr << "warning: run diverged: " << r.failure << '\n';
  return 0;
}

struct SweepArgs {
  ConfigOptions config;
  unsigned workers = 0;
  std::string output, summary;
};

int cmd_sweep(const SweepArgs& a) {
  const ExperimentConfig cfg = a.config.load();
  const SweepResult s = sweep(cfg, a.workers);
  Output out(a.output);
  write_runs_csv(s, out.stream());
  if (!a.summary.empty()) {
    Output sum(a.summary);
    write_summary_csv(s, sum.stream());
  }
  if (const auto* best = s.best_point()) {
    std::cerr << "best: inflation=" << fmt(best->point.inflation)
              << " half_length=" << fmt(best->point.half_length)
              << " zeta=" << fmt(best->point.zeta) << " rmse=" << fmt(best->rmse_mean) << '\n';
  } else {
    std::cerr << "best: none (every grid point had a divergent run)\n";
  }
  return 0;
}

struct LyapunovArgs {
  ConfigOptions config;
  std::string model = "l96";
  std::string params;
  bool augmented = false;
  std::int64_t steps = 20000;
  std::int64_t transient = 1000;
  double dt = 0.05;
  Index count = 0;
  std::uint64_t seed = 1;
  std::string output;
};

int cmd_lyapunov(const LyapunovArgs& a) {
  const ExperimentConfig cfg = a.config.load();
  LyapunovOptions opt;
  opt.transient_steps = a.transient;
  opt.seed = a.seed;
  Rng rng = make_rng(a.seed, 1);
  VectorXd spectrum;

  auto count_for = [&](Index dim) { return a.count > 0 ? std::min(a.count, dim) : dim; };
  if (a.model == "l96") {
    const VectorXd x0 = dynamics::detail::default_initial_condition(cfg.l96, rng);
    spectrum = lyapunov_spectrum(dynamics::make_flow(cfg.l96), x0, a.dt, a.steps,
                                 count_for(x0.size()), opt);
  } else if (a.model == "l05iii") {
    const VectorXd z0 = dynamics::detail::default_initial_condition(cfg.l05, rng);
    spectrum = lyapunov_spectrum(dynamics::make_flow(cfg.l05), z0, std::min(a.dt, cfg.l05.dt),
                                 a.steps, count_for(z0.size()), opt);
  } else if (a.model == "surrogate") {
    const auto basis = surrogate::build_basis(cfg.stencil_radius);
    surrogate::ParamVector p;
    if (a.params.empty()) {
      p = surrogate::true_l96_params(basis, cfg.l96.forcing);
    } else {
      std::ifstream is(a.params);
      if (!is) throw UsageError("cannot open '" + a.params + "'");
      p = surrogate::read_params_csv(is, basis);
    }
    const VectorXd x0 = dynamics::detail::default_initial_condition(cfg.l96, rng);
    if (a.augmented) {
      VectorXd z0(x0.size() + p.size());
      z0 << x0, p.coefficients();
      AugmentedSurrogateFlow flow(basis, x0.size());
      spectrum = lyapunov_spectrum(flow, z0, a.dt, a.steps, count_for(z0.size()), opt);
    } else {
      surrogate::SurrogateFlow flow(basis, x0.size());
      flow.set_params(p.coefficients());
      spectrum = lyapunov_spectrum(flow, x0, a.dt, a.steps, count_for(x0.size()), opt);
    }
  } else {
    throw UsageError("--model must be l96, l05iii or surrogate");
  }

  Output out(a.output);
  out.stream() << "index,exponent\n";
  int non_negative = 0;
  for (Index i = 0; i < spectrum.size(); ++i) {
    out.stream() << i << ',' << fmt(spectrum(i)) << '\n';
    if (spectrum(i) >= -0.01) ++non_negative;
  }
  std::cerr << spectrum.size() << " exponents, " << non_negative << " >= -0.01\n";
  return 0;
}

struct FitArgs {
  std::string input, output;
};

int cmd_fit_zeta(const FitArgs& a) {
  std::ifstream is(a.input);
  if (!is) throw UsageError("cannot open '" + a.input + "'");
  std::string line;
  if (!std::getline(is, line) || line.rfind("nx,zeta", 0) != 0)
    throw UsageError("expected a CSV with header nx,zeta");
  std::vector<std::pair<double, double>> pts;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    double nx = 0.0, zeta = 0.0;
    char comma = 0;
    if (!(row >> nx >> comma >> zeta) || comma != ',')
      throw UsageError("malformed row '" + line + "'");
    pts.emplace_back(nx, zeta);
  }
  const PowerLawFit fit = fit_power_law(pts);
  Output out(a.output);
  out.stream() << "alpha,alpha_stderr,prefactor,r_squared,n_points\n"
               << fmt(fit.alpha) << ',' << fmt(fit.alpha_stderr) << ',' << fmt(fit.prefactor)
               << ',' << fmt(fit.r_squared) << ',' << pts.size() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Augmented-state ensemble Kalman filters for learning chaotic dynamics"};
  app.require_subcommand(1);

  TruthArgs truth;
  auto* c_truth = app.add_subcommand("truth", "Generate a truth trajectory as CSV");
  truth.config.attach(c_truth, false);
  c_truth->add_option("--model", truth.model, "l96 or l05iii (overrides the config)");
  c_truth->add_option("--steps", truth.steps, "Number of stored steps")->check(CLI::PositiveNumber);
  c_truth->add_option("--stride", truth.stride, "Integration steps between stored states")
      ->check(CLI::PositiveNumber);
  c_truth->add_option("--seed", truth.seed, "Seed of the initial perturbation");
  c_truth->add_option("-o,--output", truth.output, "Output CSV (default stdout)");

  RunArgs run;
  auto* c_run = app.add_subcommand("run", "Run one seeded experiment");
  run.config.attach(c_run, true);
  auto* seed_opt = c_run->add_option("--seed", run.seed, "Run seed (default derived from base_seed)");
  c_run->add_option("--point-index", run.point_index, "Grid point to run (canonical order)");
  c_run->add_option("-o,--output", run.output, "Results CSV (default stdout)");
  c_run->add_option("--diagnostics", run.diagnostics, "Per-cycle diagnostics CSV");
  c_run->add_option("--params", run.params, "Write the final parameter mean as CSV");

  SweepArgs sw;
  auto* c_sweep = app.add_subcommand("sweep", "Sweep the hyperparameter grid over repeats");
  sw.config.attach(c_sweep, true);
  c_sweep->add_option("--workers", sw.workers, "Worker threads (default ENKFML_WORKERS or cores)");
  c_sweep->add_option("-o,--output", sw.output, "Per-run CSV (default stdout)");
  c_sweep->add_option("--summary", sw.summary, "Per-grid-point summary CSV");

  LyapunovArgs ly;
  auto* c_ly = app.add_subcommand("lyapunov", "Lyapunov spectrum of a model");
  ly.config.attach(c_ly, false);
  c_ly->add_option("--model", ly.model, "l96, l05iii or surrogate");
  c_ly->add_option("--params", ly.params, "Surrogate coefficients CSV (default: exact L96)");
  c_ly->add_flag("--augmented", ly.augmented, "Include the persistent parameters");
  c_ly->add_option("--steps", ly.steps, "Integration steps")->check(CLI::PositiveNumber);
  c_ly->add_option("--transient", ly.transient, "Discarded steps")->check(CLI::NonNegativeNumber);
  c_ly->add_option("--dt", ly.dt, "Integration step")->check(CLI::PositiveNumber);
  c_ly->add_option("--count", ly.count, "Number of exponents (default all)");
  c_ly->add_option("--seed", ly.seed, "Seed of the initial state and frame");
  c_ly->add_option("-o,--output", ly.output, "Output CSV (default stdout)");

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit-zeta", "Fit zeta* = c Nx^(-alpha)");
  c_fit->add_option("input", fit.input, "CSV with header nx,zeta")->required();
  c_fit->add_option("-o,--output", fit.output, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report("usage", e.what());
    return 2;
  }

  try {
    if (c_truth->parsed()) return cmd_truth(truth);
    if (c_run->parsed()) {
      run.seed_given = seed_opt->count() > 0;
      return cmd_run(run);
    }
    if (c_sweep->parsed()) return cmd_sweep(sw);
    if (c_ly->parsed()) return cmd_lyapunov(ly);
    if (c_fit->parsed()) return cmd_fit_zeta(fit);
  } catch (const UsageError& e) {
    report("usage", e.what());
    return 2;
  } catch (const ConfigError& e) {
    report("config", e.what());
    return 2;
  } catch (const Error& e) {
    report(to_string(e.kind()), e.what());
    return 1;
  } catch (const std::exception& e) {
    report("internal", e.what());
    return 1;
  }
  return 0;
}
