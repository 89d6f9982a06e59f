#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "enkfml.hpp"

using namespace enkfml;
using namespace enkfml::harness;

namespace {

ExperimentConfig short_l96(FilterKind kind) {
  ExperimentConfig cfg;
  cfg.filter = kind;
  cfg.l96.n_sites = 40;
  cfg.ensemble_size = 20;
  cfg.n_cycles = 60;
  cfg.burn_in_cycles = 20;
  cfg.n_repeats = 2;
  cfg.truth_spinup_steps = 500;
  cfg.divergence_rmse = 10.0;
  return cfg;
}

}  // namespace

TEST(Config, DefaultsAreValid) {
  const ExperimentConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.nx(), 40);
  EXPECT_EQ(cfg.n_obs(), 40);
  ASSERT_EQ(cfg.zetas().size(), 1u);
  EXPECT_DOUBLE_EQ(cfg.zetas()[0], 1.0 / 40.0);
}

TEST(Config, ParsesIniSections) {
  std::istringstream is(
      "[truth]\nmodel = l96\nn_sites = 80\nforcing = 8\n"
      "[filter]\nkind = lensrf_ml\nensemble_size = 20\ncl_form = obs_space\n"
      "[experiment]\nn_cycles = 500\nburn_in_cycles = 100\nobs_density = 0.5\n"
      "[grids]\ninflation = 1.0, 1.02\nhalf_length = 4,8\nzeta = 0.01,0.1\n");
  const auto cfg = parse_config(is);
  EXPECT_EQ(cfg.l96.n_sites, 80);
  EXPECT_EQ(cfg.filter, FilterKind::kLensrfMl);
  EXPECT_EQ(cfg.cl_form, ClForm::kObsSpace);
  EXPECT_EQ(cfg.n_obs(), 40);
  const auto grid = cfg.grid();
  ASSERT_EQ(grid.size(), 8u);
  EXPECT_EQ(grid[0].inflation, 1.0);
  EXPECT_EQ(grid[0].zeta, 0.01);
  EXPECT_EQ(grid[1].zeta, 0.1);
  EXPECT_EQ(grid[2].half_length, 8.0);
  EXPECT_EQ(grid[7].inflation, 1.02);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, RejectsUnknownAndMalformed) {
  std::istringstream unknown_key("[filter]\nbogus = 1\n");
  EXPECT_THROW(parse_config(unknown_key), ConfigError);
  std::istringstream unknown_section("[nope]\na = 1\n");
  EXPECT_THROW(parse_config(unknown_section), ConfigError);
  std::istringstream bad_number("[experiment]\nn_cycles = many\n");
  EXPECT_THROW(parse_config(bad_number), ConfigError);
  std::istringstream bad_model("[truth]\nmodel = l63\n");
  EXPECT_THROW(parse_config(bad_model), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/file.cfg"), ConfigError);
}

TEST(Config, Overrides) {
  ExperimentConfig cfg;
  apply_override(cfg, "filter.kind=ienkf_ml");
  apply_override(cfg, "experiment.update_interval=0.4");
  apply_override(cfg, "grids.inflation=1.0,1.01");
  EXPECT_EQ(cfg.filter, FilterKind::kIenkfMl);
  EXPECT_DOUBLE_EQ(cfg.update_interval, 0.4);
  EXPECT_EQ(cfg.inflation_grid.size(), 2u);
  EXPECT_THROW(apply_override(cfg, "filterkind"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "filter.scheme=qr"), ConfigError);
}

TEST(Config, ValidationRules) {
  auto expect_invalid = [](const std::string& assignment) {
    ExperimentConfig cfg;
    apply_override(cfg, assignment);
    EXPECT_THROW(cfg.validate(), ConfigError) << assignment;
  };
  expect_invalid("experiment.burn_in_cycles=10000");
  expect_invalid("experiment.obs_density=1.5");
  expect_invalid("experiment.update_interval=0.07");
  expect_invalid("filter.ensemble_size=1");
  expect_invalid("grids.inflation=0.9");
  expect_invalid("grids.zeta=1.5");
  expect_invalid("surrogate.stencil_radius=30");
  ExperimentConfig local;
  local.filter = FilterKind::kLetkfMl;
  local.adaptive_inflation = true;
  EXPECT_THROW(local.validate(), ConfigError);
}

TEST(Config, FilterNamesRoundTrip) {
  for (auto k : {FilterKind::kEnkfMl, FilterKind::kLensrfMl, FilterKind::kLetkfMl,
                 FilterKind::kIenkfMl, FilterKind::kReferenceKnownModel})
    EXPECT_EQ(parse_filter(to_string(k)), k);
  EXPECT_EQ(parse_model(to_string(ModelKind::kL05III)), ModelKind::kL05III);
}

TEST(Config, PaperScale) {
  ExperimentConfig cfg;
  cfg.filter = FilterKind::kLetkfMl;
  apply_paper_scale(cfg);
  EXPECT_EQ(cfg.n_cycles, 15000);
  EXPECT_EQ(cfg.burn_in_cycles, 5000);
  EXPECT_EQ(cfg.n_repeats, 10);
  cfg.filter = FilterKind::kEnkfMl;
  apply_paper_scale(cfg);
  EXPECT_EQ(cfg.n_cycles, 60000);
  EXPECT_EQ(cfg.n_repeats, 100);
}

TEST(PowerLaw, ExactLaws) {
  for (double alpha : {1.0, 2.0, 0.5}) {
    std::vector<std::pair<double, double>> pts;
    for (double n : {100.0, 200.0, 400.0, 800.0}) pts.emplace_back(n, 3.0 * std::pow(n, -alpha));
    const auto fit = fit_power_law(pts);
    EXPECT_NEAR(fit.alpha, alpha, 1e-12);
    EXPECT_NEAR(fit.alpha_stderr, 0.0, 1e-10);
    EXPECT_NEAR(fit.prefactor, 3.0, 1e-9);
    EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
  }
}

TEST(PowerLaw, InvalidInputs) {
  EXPECT_THROW(fit_power_law({{1, 1}, {2, 2}}), InvalidInput);
  EXPECT_THROW(fit_power_law({{1, 1}, {2, 0}, {3, 1}}), InvalidInput);
  EXPECT_THROW(fit_power_law({{2, 1}, {2, 2}, {2, 3}}), InvalidInput);
}

TEST(PowerLaw, NoisyFitHasPositiveStderr) {
  const auto fit = fit_power_law({{100, 0.010}, {200, 0.0052}, {400, 0.0024}, {800, 0.0013}});
  EXPECT_NEAR(fit.alpha, 1.0, 0.05);
  EXPECT_GT(fit.alpha_stderr, 0.0);
}

TEST(RefineLogMinimum, RecoversParabolaVertex) {
  std::vector<std::pair<double, double>> s;
  for (double z : {0.01, 0.02, 0.04, 0.08}) s.emplace_back(z, std::pow(std::log(z / 0.03), 2) + 1.0);
  EXPECT_NEAR(refine_log_minimum(s), 0.03, 1e-12);
}

TEST(RefineLogMinimum, EdgesAndFlatCurves) {
  EXPECT_EQ(refine_log_minimum({{0.01, 1.0}, {0.02, 2.0}, {0.04, 3.0}}), 0.01);
  EXPECT_EQ(refine_log_minimum({{0.01, 3.0}, {0.02, 2.0}, {0.04, 1.0}}), 0.04);
  EXPECT_EQ(refine_log_minimum({{0.5, 1.0}}), 0.5);
  EXPECT_THROW(refine_log_minimum({}), InvalidInput);
}

TEST(Summary, MeanStdAndDivergence) {
  std::vector<RunResult> runs(3);
  runs[0].rmse = 0.2;
  runs[1].rmse = 0.4;
  runs[2].diverged = true;
  const auto s = summarize(GridPoint{}, runs);
  EXPECT_EQ(s.n_runs, 3);
  EXPECT_EQ(s.n_diverged, 1);
  EXPECT_NEAR(s.rmse_mean, 0.3, 1e-15);
  EXPECT_NEAR(s.rmse_std, std::sqrt(0.02), 1e-15);
  std::vector<PointSummary> pts{s, summarize(GridPoint{}, {runs[1]}), summarize(GridPoint{}, {runs[0]})};
  EXPECT_EQ(best_index(pts), std::optional<std::size_t>(2));
  EXPECT_FALSE(best_index({s}).has_value());
}

TEST(Seeds, RepeatsAreIndependent) {
  EXPECT_NE(run_seed(1, 0), run_seed(1, 1));
  EXPECT_NE(run_seed(1, 0), run_seed(2, 0));
  EXPECT_EQ(run_seed(7, 3), run_seed(7, 3));
}

TEST(Experiment, DeterministicPerSeed) {
  const auto cfg = short_l96(FilterKind::kEnkfMl);
  const auto a = run_experiment(cfg, cfg.first_point(), 11);
  const auto b = run_experiment(cfg, cfg.first_point(), 11);
  const auto c = run_experiment(cfg, cfg.first_point(), 12);
  EXPECT_FALSE(a.diverged) << a.failure;
  EXPECT_EQ(a.rmse, b.rmse);
  EXPECT_NE(a.rmse, c.rmse);
  EXPECT_EQ(a.final_params.size(), 18);
}

TEST(Experiment, SingleScoredCycleAfterBurnIn) {
  auto cfg = short_l96(FilterKind::kEnkfMl);
  cfg.n_cycles = 21;
  cfg.burn_in_cycles = 20;
  RunOptions opt;
  opt.record_diagnostics = true;
  const auto r = run_experiment(cfg, cfg.first_point(), 3, opt);
  ASSERT_EQ(r.diagnostics.size(), 21u);
  EXPECT_DOUBLE_EQ(r.rmse, r.diagnostics.back().analysis_rmse);
  EXPECT_EQ(r.cycles_completed, 21);
}

TEST(Experiment, AbortThresholdMarksDivergence) {
  auto cfg = short_l96(FilterKind::kEnkfMl);
  cfg.divergence_rmse = 1e-3;
  cfg.abort_rmse = 1e-3;
  const auto r = run_experiment(cfg, cfg.first_point(), 3);
  EXPECT_TRUE(r.diverged);
  EXPECT_EQ(r.cycles_completed, 0);
  EXPECT_FALSE(r.failure.empty());
}

TEST(Sweep, CanonicalOrderAndDeterminism) {
  auto cfg = short_l96(FilterKind::kEnkfMl);
  cfg.inflation_grid = {1.0, 1.05};
  const auto one = sweep(cfg, 1);
  const auto two = sweep(cfg, 2);
  ASSERT_EQ(one.runs.size(), 4u);
  ASSERT_EQ(one.points.size(), 2u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(one.runs[i].rmse, two.runs[i].rmse);
    EXPECT_EQ(one.runs[i].seed, run_seed(cfg.base_seed, int(i % 2)));
    EXPECT_EQ(one.runs[i].point.inflation, cfg.inflation_grid[i / 2]);
  }
  ASSERT_NE(one.best_point(), nullptr);

  std::ostringstream runs, summary;
  write_runs_csv(one, runs);
  write_summary_csv(one, summary);
  const std::string runs_text = runs.str();
  EXPECT_EQ(runs_text.substr(0, runs_text.find('\n')),
            "seed,inflation,half_length,zeta,rmse_mean,diverged");
  EXPECT_EQ(summary.str().substr(0, summary.str().find('\n')),
            "inflation,half_length,zeta,rmse_mean,rmse_std,n_runs,n_diverged,mean_iterations,best");
  EXPECT_EQ(std::count(runs_text.begin(), runs_text.end(), '\n'), 5);
}

TEST(Csv, DiagnosticsAndFormatting) {
  std::vector<CycleDiagnostics> d(1);
  d[0].cycle = 4;
  d[0].forecast_rmse = 0.5;
  d[0].analysis_rmse = 0.25;
  d[0].iterations = 3;
  std::ostringstream plain, iterative;
  write_diagnostics_csv(d, false, plain);
  write_diagnostics_csv(d, true, iterative);
  EXPECT_EQ(plain.str(), "cycle,forecast_rmse,analysis_rmse,inflation\n4,0.5,0.25,1\n");
  EXPECT_EQ(iterative.str(),
            "cycle,forecast_rmse,analysis_rmse,inflation,iterations,converged\n4,0.5,0.25,1,3,1\n");
  EXPECT_EQ(fmt(std::nan("")), "nan");
  EXPECT_EQ(fmt(-INFINITY), "-inf");
  EXPECT_EQ(fmt(0.1), "0.1");
}

TEST(Pool, WorkerCountAndExceptions) {
  setenv("ENKFML_WORKERS", "3", 1);
  EXPECT_EQ(worker_count(), 3u);
  setenv("ENKFML_WORKERS", "zero", 1);
  EXPECT_GE(worker_count(), 1u);
  unsetenv("ENKFML_WORKERS");

  std::vector<int> hit(50, 0);
  parallel_for(50, 4, [&](std::size_t i) { hit[i] += 1; });
  EXPECT_EQ(std::count(hit.begin(), hit.end(), 1), 50);
  EXPECT_THROW(parallel_for(10, 3,
                            [](std::size_t i) {
                              if (i == 7) throw InvalidInput("boom");
                            }),
               InvalidInput);
  EXPECT_NO_THROW(parallel_for(0, 4, [](std::size_t) {}));
}
