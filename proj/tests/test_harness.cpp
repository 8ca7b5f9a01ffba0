#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace flrboot;

namespace {

ExperimentPlan small_plan() {
  ExperimentPlan p;
  p.n = {60};
  p.reps = 12;
  p.B = 40;
  p.seed = 11;
  p.methods = {Method::clt, Method::rb, Method::pb, Method::pb_std, Method::naive, Method::naive_std};
  return p;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("flrboot_test_" + name);
  std::filesystem::remove_all(d);
  return d;
}

}  // namespace

TEST(Methods, NamesRoundTrip) {
  for (Method m : {Method::clt, Method::rb, Method::pb, Method::pb_std, Method::naive, Method::naive_std})
    EXPECT_EQ(parse_method(method_name(m)), m);
  EXPECT_THROW(parse_method("wild"), ValidationError);
  EXPECT_EQ(method_bootstrap(Method::pb_std), std::make_pair(Variant::pb_modified, Scaling::bootstrap_scale));
  EXPECT_EQ(method_bootstrap(Method::naive), std::make_pair(Variant::pb_naive, Scaling::data_scale));
  EXPECT_EQ(method_bootstrap(Method::rb).first, Variant::residual);
}

TEST(Plan, Validation) {
  ExperimentPlan p = small_plan();
  EXPECT_NO_THROW(p.validate());
  p.reps = 0;
  EXPECT_THROW(p.validate(), ValidationError);
  p = small_plan();
  p.methods.clear();
  EXPECT_THROW(p.validate(), ValidationError);
  p = small_plan();
  p.B = 0;
  EXPECT_THROW(p.validate(), ValidationError);
  p = small_plan();
  p.bias_ratios = {0.5};
  EXPECT_THROW(p.validate(), ValidationError);
  p = small_plan();
  p.a = {0.9};
  EXPECT_THROW(p.validate(), DomainError);
}

TEST(Plan, ScenarioGrid) {
  ExperimentPlan p = small_plan();
  p.n = {50, 100};
  p.nu = {5, infinite_dof};
  p.error_modes = {ErrorMode::homoscedastic_chisq, ErrorMode::heteroscedastic_chisq};
  const auto s = p.scenarios();
  ASSERT_EQ(s.size(), 8u);
  EXPECT_EQ(s[0].n, 50);
  EXPECT_EQ(s[7].n, 100);
  EXPECT_EQ(s[1].error_mode, ErrorMode::heteroscedastic_chisq);
  EXPECT_TRUE(std::isinf(s[2].nu));
}

TEST(Plan, Tunings) {
  ExperimentPlan p = small_plan();
  DgpSpec s;
  s.n = 1000;
  EXPECT_EQ(tunings_for(p, s).front(), (TuningChoice{6, 7, 6}));
  p.tuning = TuningPolicy::h_offset;
  p.h_offsets = {0, 2};
  EXPECT_EQ(tunings_for(p, s)[1], (TuningChoice{6, 8, 6}));
  p.tuning = TuningPolicy::h_sweep;
  p.h_values = {6, 20};
  EXPECT_THROW(tunings_for(p, s), TruncationError);
  p.kind = ExperimentKind::bias;
  p.bias_g = 6;
  const auto b = tunings_for(p, s);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[1], (TuningChoice{6, 9, 6}));
  EXPECT_EQ(b[2], (TuningChoice{6, 12, 6}));
}

TEST(Plan, ParseFile) {
  std::istringstream in(
      "# comment\n"
      "experiment = coverage\n"
      "n = 50, 100   # sizes\n"
      "nu = 5, inf\n"
      "error_mode = homoscedastic, heteroscedastic\n"
      "methods = clt, pb_std\n"
      "tuning = explicit\n"
      "tunings = 2:3:2, 4:4:4\n"
      "reps = 7\n"
      "B = 99\n"
      "seed = 123\n");
  const ExperimentPlan p = parse_plan(in);
  EXPECT_EQ(p.n, (std::vector<Index>{50, 100}));
  EXPECT_TRUE(std::isinf(p.nu[1]));
  EXPECT_EQ(p.error_modes[0], ErrorMode::homoscedastic_chisq);
  EXPECT_EQ(p.methods, (std::vector<Method>{Method::clt, Method::pb_std}));
  EXPECT_EQ(p.tuning, TuningPolicy::explicit_grid);
  EXPECT_EQ(p.tunings[1], (TuningChoice{4, 4, 4}));
  EXPECT_EQ(p.reps, 7);
  EXPECT_EQ(p.B, 99);
  EXPECT_EQ(p.seed, 123u);
  EXPECT_TRUE(p.has_seed);
}

TEST(Plan, ParseErrorsCarryLine) {
  std::istringstream bad("reps = 5\nB = many\n");
  try {
    parse_plan(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 2u);
  }
  std::istringstream nokey("reps 5\n");
  EXPECT_THROW(parse_plan(nokey), ParseError);
  std::istringstream unknown("colour = red\n");
  EXPECT_THROW(parse_plan(unknown), ParseError);
  std::istringstream trip("tunings = 2:3\n");
  EXPECT_THROW(parse_plan(trip), ParseError);
}

TEST(ResultCsv, RoundTrip) {
  ResultRow a;
  a.scenario_id = 2;
  a.n = 200;
  a.a = 2.5;
  a.b = 5.5;
  a.nu = infinite_dof;
  a.error_mode = "heteroscedastic";
  a.method = "pb_std";
  a.k = 4;
  a.h = 4;
  a.g = 4;
  a.reps = 500;
  a.coverage = 0.946;
  a.mean_width = 0.123456789012;
  a.mc_se = binomial_se(0.946, 500);
  ResultRow b = a;
  b.method = "test_max_enforced";
  b.coverage.reset();
  b.mean_width.reset();
  b.rejection_rate = 0.05;
  b.failed_reps = 3;
  std::stringstream io;
  emit_csv(io, {a, b});
  const auto back = parse_csv(io);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].method, a.method);
  EXPECT_NEAR(*back[0].coverage, 0.946, 1e-12);
  EXPECT_NEAR(*back[0].mean_width, *a.mean_width, 1e-10);
  EXPECT_TRUE(std::isinf(back[0].nu));
  EXPECT_FALSE(back[1].coverage.has_value());
  EXPECT_NEAR(*back[1].rejection_rate, 0.05, 1e-15);
  EXPECT_EQ(back[1].failed_reps, 3);
}

TEST(ResultCsv, HeaderOnlyForNoRows) {
  std::stringstream io;
  emit_csv(io, {});
  std::string line;
  std::getline(io, line);
  EXPECT_EQ(line, "scenario_id,n,a,b,nu,error_mode,method,k,h,g,reps,coverage,mean_width,rejection_rate,mc_se,failed_reps");
  EXPECT_FALSE(std::getline(io, line));
  std::stringstream again(io.str());
  EXPECT_TRUE(parse_csv(again).empty());
  std::stringstream wrong("a,b\n");
  EXPECT_THROW(parse_csv(wrong), ParseError);
}

TEST(BinomialSe, Formula) {
  EXPECT_NEAR(binomial_se(0.95, 500), std::sqrt(0.95 * 0.05 / 500), 1e-15);
  EXPECT_EQ(binomial_se(1.0, 10), 0.0);
  EXPECT_EQ(binomial_se(0.5, 0), 0.0);
}

TEST(Coverage, RowsAndDeterminism) {
  ExperimentPlan p = small_plan();
  const auto a = run_coverage(p);
  ASSERT_EQ(a.size(), 6u);
  for (const auto& r : a) {
    ASSERT_TRUE(r.coverage.has_value());
    EXPECT_GE(*r.coverage, 0.0);
    EXPECT_LE(*r.coverage, 1.0);
    EXPECT_EQ(r.reps + r.failed_reps, 12);
    EXPECT_NEAR(r.mc_se, binomial_se(*r.coverage, r.reps), 1e-15);
  }
  p.workers = 8;
  EXPECT_EQ(run_coverage(p), a);
}

TEST(Coverage, SingleRepIsZeroOrOne) {
  ExperimentPlan p = small_plan();
  p.reps = 1;
  for (const auto& r : run_coverage(p)) EXPECT_TRUE(*r.coverage == 0.0 || *r.coverage == 1.0);
}

TEST(Coverage, NoiselessExactFit) {
  ExperimentPlan p = small_plan();
  p.error_modes = {ErrorMode::none};
  p.tuning = TuningPolicy::explicit_grid;
  p.tunings = {{15, 15, 15}};
  p.reps = 5;
  for (const auto& r : run_coverage(p)) {
    EXPECT_EQ(*r.coverage, 1.0) << r.method;
    EXPECT_LT(*r.mean_width, 1e-6) << r.method;
  }
}

TEST(Coverage, CommonRandomNumbers) {
  // each rep draws the same data whatever other methods run
  ExperimentPlan p = small_plan();
  p.methods = {Method::clt};
  p.reps = 4;
  const auto one = run_coverage(p);
  p.methods = {Method::pb_std, Method::clt};
  const auto two = run_coverage(p);
  EXPECT_EQ(one[0].coverage, two[1].coverage);
  EXPECT_EQ(one[0].mean_width, two[1].mean_width);
}

TEST(Bias, FullRankGivesZero) {
  ExperimentPlan p = small_plan();
  p.kind = ExperimentKind::bias;
  p.bias_g = 15;
  p.bias_ratios = {1.0};
  const auto res = run_bias_density(p);
  ASSERT_EQ(res.size(), 1u);
  for (double x : res[0].samples) EXPECT_NEAR(x, 0.0, 1e-8);
  EXPECT_EQ(res[0].sigma_tau, 0.0);
}

TEST(Bias, DeterministicAndSpread) {
  ExperimentPlan p = small_plan();
  p.kind = ExperimentKind::bias;
  p.n = {400};
  p.reps = 40;
  p.bias_g = 4;
  const auto a = run_bias_density(p);
  ASSERT_EQ(a.size(), 3u);
  for (double x : a[0].samples) EXPECT_NEAR(x, 0.0, 1e-8);
  EXPECT_LT(a[1].sd(), a[2].sd());
  EXPECT_GT(a[2].sigma_tau, a[1].sigma_tau);
  p.workers = 8;
  const auto b = run_bias_density(p);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a[i].samples, b[i].samples);
}

TEST(Bias, BinnedDensityIntegratesToOne) {
  std::vector<double> x;
  for (int i = 0; i < 1000; ++i) x.push_back(std::sin(i * 0.37));
  const auto d = binned_density(x, 20);
  ASSERT_EQ(d.size(), 20u);
  double area = 0.0;
  const double w = d[1].first - d[0].first;
  for (const auto& [c, v] : d) area += v * w;
  EXPECT_NEAR(area, 1.0, 1e-12);
  EXPECT_TRUE(binned_density({}).empty());
  EXPECT_EQ(binned_density({2.0, 2.0}).size(), 30u);
}

TEST(Power, RowsNamedByStatistic) {
  ExperimentPlan p = small_plan();
  p.kind = ExperimentKind::power;
  p.n = {50};
  p.p = {0.0, 1.0};
  p.reps = 6;
  p.B = 30;
  p.base.slope_scale = 50;
  p.b = {3.5};
  const auto rows = run_power(p);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].method, "test_max_enforced");
  EXPECT_EQ(rows[1].method, "test_max_plain");
  for (const auto& r : rows) {
    ASSERT_TRUE(r.rejection_rate.has_value());
    EXPECT_FALSE(r.coverage.has_value());
  }
  p.workers = 8;
  EXPECT_EQ(run_power(p), rows);
}

TEST(Clt, KsDistance) {
  EXPECT_EQ(ks_distance_normal({}), 1.0);
  EXPECT_NEAR(ks_distance_normal({0.0}), 0.5, 1e-15);
  ExperimentPlan p = small_plan();
  p.kind = ExperimentKind::clt;
  p.reps = 50;
  const auto r = run_clt_check(p);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].statistics.size() + static_cast<std::size_t>(r[0].failed_reps), 50u);
  EXPECT_LT(r[0].ks, 0.5);
}

TEST(Experiment, WritesFiles) {
  const auto dir = temp_dir("cov");
  ExperimentPlan p = small_plan();
  p.reps = 3;
  run_experiment(p, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "results.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "scenarios.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "coverage_s0.svg"));
  EXPECT_TRUE(std::filesystem::exists(dir / "width_s0.svg"));
  std::ifstream in(dir / "results.csv");
  EXPECT_EQ(parse_csv(in).size(), 6u);

  const auto bdir = temp_dir("bias");
  p.kind = ExperimentKind::bias;
  run_experiment(p, bdir);
  for (const char* f : {"bias_samples.csv", "bias_summary.csv", "bias_density.csv", "bias_density.svg"})
    EXPECT_TRUE(std::filesystem::exists(bdir / f)) << f;
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(bdir);
}

TEST(Experiment, FailureBudget) {
  // n = 3, h = 2, B = 1: any resample repeating a curve has rank below h, so most reps fail
  ExperimentPlan p = small_plan();
  p.n = {3};
  p.tuning = TuningPolicy::explicit_grid;
  p.tunings = {{1, 2, 1}};
  p.methods = {Method::pb_std};
  p.reps = 20;
  p.B = 1;
  EXPECT_THROW(run_coverage(p), NumericalError);
  p.max_failed_fraction = 1.0;
  const auto rows = run_coverage(p);
  EXPECT_EQ(rows[0].reps + rows[0].failed_reps, 20);
  EXPECT_GT(rows[0].failed_reps, 0);
  EXPECT_GT(rows[0].reps, 0);
}
