// flrboot: fit, intervals, tests and simulations for scalar-on-function regression.
//
// Exit codes: 0 success, 2 usage, 3 invalid data or plan, 4 numerical failure.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "flrboot.hpp"

namespace fs = std::filesystem;
using namespace flrboot;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string data, x0, targets, plan, y, grid;
  std::string out;
  bool header = false;
  std::optional<std::uint64_t> seed;
  unsigned workers = default_workers();
  std::optional<Index> h, g, k;
  bool rule = false, cv = false;
  int cv_folds = 5, cv_repeats = 5;
  int B = 500;
  double level = 0.95;
  std::string variant = "pb_std";
  std::string interval = "symmetrized";
  bool enforce_null = false, both = false;
  bool raw_x0 = false, add_mean = false;
  std::optional<Index> reps;
};

std::uint64_t resolve_seed(const Options& o) {
  if (o.seed) return *o.seed;
  std::random_device rd;
  const std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::cerr << "no --seed given; using seed " << s << '\n';
  return s;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing ") + what);
  if (!fs::exists(path)) throw UsageError(std::string(what) + " '" + path + "' does not exist");
}

GridPtr load_grid(const Options& o, Index m) {
  if (o.grid.empty()) return Grid::uniform(m);
  require_file(o.grid, "grid file");
  const Vector t = read_vector_csv(o.grid, o.header);
  if (t.size() != m)
    throw DimensionError("grid has " + std::to_string(t.size()) + " points but curves have " + std::to_string(m));
  try {
    return Grid::from_points(t, QuadratureRule::rectangle);
  } catch (const DomainError&) {
    warn("grid points are not equally spaced; using trapezoid weights");
    return Grid::from_points(t, QuadratureRule::trapezoid);
  }
}

FunctionalDataset load_dataset(const Options& o) {
  require_file(o.data, "data file");
  const Matrix M = read_numeric_csv(o.data, o.header);
  Matrix X;
  Vector y;
  if (!o.y.empty()) {
    require_file(o.y, "response file");
    X = M;
    y = read_vector_csv(o.y, o.header);
  } else {
    if (M.cols() < 3) throw ValidationError(o.data + ": need at least two curve columns plus a response column");
    X = M.leftCols(M.cols() - 1);
    y = M.col(M.cols() - 1);
  }
  if (X.rows() < 2) throw ValidationError(o.data + ": need at least 2 observations");
  if (y.size() != X.rows())
    throw DimensionError("found " + std::to_string(y.size()) + " responses for " + std::to_string(X.rows()) + " curves");
  GridPtr grid = load_grid(o, X.cols());
  return FunctionalDataset(std::move(grid), std::move(X), std::move(y));
}

std::vector<Curve> load_curves(const std::string& path, const GridPtr& grid, bool header, const char* what) {
  require_file(path, what);
  const Matrix M = read_numeric_csv(path, header);
  if (M.cols() != grid->size())
    throw DimensionError(std::string(what) + " rows have " + std::to_string(M.cols()) + " values, grid has " +
                         std::to_string(grid->size()));
  std::vector<Curve> out;
  for (Index r = 0; r < M.rows(); ++r) out.emplace_back(grid, M.row(r).transpose());
  return out;
}

void check_tuning_flags(const Options& o) {
  const bool explicit_levels = o.h || o.g;
  if (explicit_levels + o.rule + o.cv > 1)
    throw UsageError("--h/--g, --rule-of-thumb and --cv are mutually exclusive");
  if (o.rule && !o.k) throw UsageError("--rule-of-thumb needs --k");
  if (o.cv && o.k) throw UsageError("--cv selects k itself; drop --k");
  if (o.g && !o.h) throw UsageError("--g needs --h");
}

TuningChoice resolve_tuning(const Options& o, const FunctionalDataset& ds, Index rank, std::uint64_t seed,
                            std::ostream& log) {
  if (o.h) {
    const Index g = o.g.value_or(*o.h);
    return TuningChoice{o.k.value_or(g), *o.h, g};
  }
  if (o.k) return rule_of_thumb(*o.k, rank);
  const Index n_train = ds.n() - (ds.n() + o.cv_folds - 1) / o.cv_folds;
  const Index top = std::min<Index>({10, rank, n_train - 1, ds.m()});
  if (top < 1) throw TruncationError("too few observations for cross-validation", 0);
  std::vector<Index> cand;
  for (Index k = 1; k <= top; ++k) cand.push_back(k);
  const Index k = cv_select_k(ds, cand, o.cv_folds, o.cv_repeats, derive_seed(seed, {0xc5ULL}));
  log << "cross-validated k = " << k << '\n';
  return rule_of_thumb(k, rank);
}

fs::path out_dir(const Options& o, const char* fallback) {
  fs::path d = o.out.empty() ? fs::path(fallback) : fs::path(o.out);
  fs::create_directories(d);
  return d;
}

std::pair<Variant, Scaling> parse_variant(const std::string& v) {
  if (v == "pb") return {Variant::pb_modified, Scaling::data_scale};
  if (v == "pb_std") return {Variant::pb_modified, Scaling::bootstrap_scale};
  if (v == "naive") return {Variant::pb_naive, Scaling::data_scale};
  if (v == "naive_std") return {Variant::pb_naive, Scaling::bootstrap_scale};
  if (v == "rb") return {Variant::residual, Scaling::bootstrap_scale};
  throw UsageError("unknown variant '" + v + "'");
}

std::string join(const Vector& v) {
  std::string s;
  for (Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_number(v[i]);
  return s;
}

int cmd_fit(const Options& o) {
  check_tuning_flags(o);
  const std::uint64_t seed = resolve_seed(o);
  const FunctionalDataset ds = load_dataset(o);
  const ScoreSpace space(ds);
  const TuningChoice t = resolve_tuning(o, ds, space.rank(), seed, std::cerr);
  const FpcrFit fit = fpcr_fit(ds, t.h);
  const Vector& r = fit.residuals;
  const double mean = r.mean();
  const double sd = std::sqrt((r.array() - mean).square().sum() / static_cast<double>(std::max<Index>(r.size() - 1, 1)));
  std::cout << "{\n"
            << "  \"seed\": " << seed << ",\n"
            << "  \"n\": " << ds.n() << ",\n"
            << "  \"m\": " << ds.m() << ",\n"
            << "  \"rank\": " << space.rank() << ",\n"
            << "  \"h\": " << t.h << ",\n"
            << "  \"eigenvalues\": [" << join(space.eigenvalues()) << "],\n"
            << "  \"coefficients\": [" << join(fit.coeffs) << "],\n"
            << "  \"y_bar\": " << format_number(ds.y_bar()) << ",\n"
            << "  \"residuals\": {\"mean\": " << format_number(mean) << ", \"sd\": " << format_number(sd)
            << ", \"min\": " << format_number(r.minCoeff()) << ", \"max\": " << format_number(r.maxCoeff()) << "}\n"
            << "}\n";
  const fs::path dir = out_dir(o, ".");
  std::ofstream f(dir / "beta.csv", std::ios::binary);
  write_csv_row(f, {"t", "beta"});
  for (Index i = 0; i < ds.m(); ++i)
    write_csv_row(f, {format_number(ds.grid()->points()[i]), format_number(fit.beta_hat[i])});
  return 0;
}

int cmd_ci(const Options& o) {
  check_tuning_flags(o);
  if (o.x0.empty()) throw UsageError("ci needs --x0");
  const std::uint64_t seed = resolve_seed(o);
  const FunctionalDataset ds = load_dataset(o);
  const auto x0s = load_curves(o.x0, ds.grid(), o.header, "x0 file");
  auto space = std::make_shared<const ScoreSpace>(ds);
  const TuningChoice t = resolve_tuning(o, ds, space->rank(), seed, std::cerr);
  for (const auto& w : detail::tuning_warnings(t)) warn(w);
  const ProjectionProblem P(space, x0s, t, !o.raw_x0);
  const double shift = o.add_mean ? ds.y_bar() : 0.0;

  BootstrapConfig cfg;
  cfg.B = o.B;
  cfg.tuning = t;
  cfg.level = o.level;
  cfg.seed = seed;
  cfg.workers = o.workers;
  cfg.center_x0 = !o.raw_x0;
  if (o.interval == "percentile")
    cfg.interval = IntervalKind::percentile;
  else if (o.interval != "symmetrized")
    throw UsageError("unknown interval kind '" + o.interval + "'");
  cfg.validate();

  std::vector<BootstrapReport> reports;
  if (o.variant != "clt") {
    std::tie(cfg.variant, cfg.studentize) = parse_variant(o.variant);
    const ReplicateTable table = run_replicates(P, cfg.variant, cfg.studentize, cfg.B, cfg.seed, cfg.workers);
    for (Index l = 0; l < P.directions(); ++l) reports.push_back(detail::report_for(P, table, l, cfg));
  } else {
    for (Index l = 0; l < P.directions(); ++l) {
      BootstrapReport r;
      r.point = P.point()[l];
      r.se = P.standard_error(l, Variant::pb_modified);
      r.interval = clt_interval(P, l, o.level);
      reports.push_back(r);
    }
  }

  std::cout << "seed " << seed << "  variant " << o.variant << "  k " << t.k << "  h " << t.h << "  g " << t.g
            << "  B " << o.B << "  level " << format_number(o.level) << '\n';
  const fs::path dir = out_dir(o, ".");
  std::ofstream f(dir / "ci.csv", std::ios::binary);
  write_csv_row(f, {"x0", "point", "se", "lo", "hi", "B_eff", "degenerate", "k", "h", "g", "level", "variant"});
  for (std::size_t l = 0; l < reports.size(); ++l) {
    const auto& r = reports[l];
    for (const auto& w : r.warnings) warn(w);
    const std::vector<std::string> row{std::to_string(l + 1),
                                       format_number(r.point + shift),
                                       format_number(r.se),
                                       format_number(r.interval.lo + shift),
                                       format_number(r.interval.hi + shift),
                                       std::to_string(r.B_eff),
                                       std::to_string(r.degenerate_count),
                                       std::to_string(t.k),
                                       std::to_string(t.h),
                                       std::to_string(t.g),
                                       format_number(o.level),
                                       o.variant};
    write_csv_row(f, row);
    std::cout << "x0[" << l + 1 << "]  point " << row[1] << "  se " << row[2] << "  interval [" << row[3] << ", "
              << row[4] << "]\n";
  }
  return 0;
}

int cmd_test(const Options& o) {
  check_tuning_flags(o);
  if (o.targets.empty()) throw UsageError("test needs --targets");
  const std::uint64_t seed = resolve_seed(o);
  const FunctionalDataset ds = load_dataset(o);
  const TargetSet targets(load_curves(o.targets, ds.grid(), o.header, "targets file"));
  const ScoreSpace space(ds);
  const TuningChoice t = resolve_tuning(o, ds, space.rank(), seed, std::cerr);

  BootstrapConfig cfg;
  cfg.B = o.B;
  cfg.tuning = t;
  cfg.seed = seed;
  cfg.workers = o.workers;
  if (o.variant == "clt" || o.variant == "rb")
    throw UsageError("tests use the paired bootstrap; --variant " + o.variant + " is not available");
  std::tie(cfg.variant, cfg.studentize) = parse_variant(o.variant);

  std::vector<bool> modes;
  if (o.both)
    modes = {false, true};
  else
    modes = {o.enforce_null};

  std::cout << "seed " << seed << "  k " << t.k << "  h " << t.h << "  g " << t.g << "  B " << o.B << "  targets "
            << targets.size() << " (rank " << targets.rank() << ")\n";
  const fs::path dir = out_dir(o, ".");
  std::ofstream f(dir / "test.csv", std::ios::binary);
  write_csv_row(f, {"enforce_null", "statistic", "w_observed", "p_value", "B_eff", "degenerate"});
  std::vector<std::string> warned;
  Vector per_direction;
  for (bool enforce : modes) {
    const auto res = bootstrap_tests(ds, targets, cfg, enforce, true);
    for (const auto& r : res) {
      const char* kind = r.statistic_kind == StatisticKind::l2 ? "L2" : "max";
      write_csv_row(f, {enforce ? "true" : "false", kind, format_number(r.w_observed), format_number(r.p_value),
                        std::to_string(r.B_eff), std::to_string(r.degenerate_count)});
      std::cout << (enforce ? "enforced " : "plain    ") << kind << "  W " << format_number(r.w_observed) << "  p "
                << format_number(r.p_value) << '\n';
    }
    per_direction = res[0].per_direction;
  }
  std::ofstream d(dir / "directions.csv", std::ios::binary);
  write_csv_row(d, {"target", "t_statistic"});
  for (Index l = 0; l < per_direction.size(); ++l)
    write_csv_row(d, {std::to_string(l + 1), format_number(per_direction[l])});
  return 0;
}

int cmd_simulate(const Options& o, const CLI::App& sub) {
  require_file(o.plan, "plan file");
  ExperimentPlan plan = load_plan(o.plan);
  if (o.seed) {
    plan.seed = *o.seed;
  } else if (!plan.has_seed) {
    plan.seed = resolve_seed(o);
  }
  if (sub.count("--workers")) plan.workers = o.workers;
  if (o.reps) plan.reps = *o.reps;
  if (sub.count("--B")) plan.B = o.B;
  if (sub.count("--level")) plan.level = o.level;
  plan.validate();
  const fs::path dir = out_dir(o, "sim_out");
  std::cout << "seed " << plan.seed << "  workers " << plan.workers << "  reps " << plan.reps << "  B " << plan.B
            << "  output " << dir.string() << '\n';
  run_experiment(plan, dir);
  return 0;
}

int cmd_diagnose_bias(const Options& o) {
  check_tuning_flags(o);
  if (o.x0.empty()) throw UsageError("diagnose-bias needs --x0");
  const std::uint64_t seed = resolve_seed(o);
  const FunctionalDataset ds = load_dataset(o);
  const auto x0s = load_curves(o.x0, ds.grid(), o.header, "x0 file");
  auto space = std::make_shared<const ScoreSpace>(ds);
  const TuningChoice t = resolve_tuning(o, ds, space->rank(), seed, std::cerr);
  const ProjectionProblem P(space, x0s, t, !o.raw_x0);
  std::cout << "k " << t.k << "  h " << t.h << "  g " << t.g << '\n';
  std::vector<double> bias;
  for (Index l = 0; l < P.directions(); ++l) bias.push_back(construction_bias(P, l));
  const fs::path dir = out_dir(o, ".");
  std::ofstream f(dir / "bias.csv", std::ios::binary);
  write_csv_row(f, {"x0", "construction_bias", "k", "h", "g"});
  for (Index l = 0; l < P.directions(); ++l) {
    const double b = bias[static_cast<std::size_t>(l)];
    write_csv_row(f, {std::to_string(l + 1), format_number(b), std::to_string(t.k), std::to_string(t.h),
                      std::to_string(t.g)});
    std::cout << "x0[" << l + 1 << "]  B_n " << format_number(b) << '\n';
  }
  return 0;
}

void add_common(CLI::App* c, Options& o) {
  c->add_option("--seed", o.seed, "master seed (printed when omitted)");
  c->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
  c->add_option("--out", o.out, "output directory");
}

void add_data(CLI::App* c, Options& o) {
  c->add_option("data", o.data, "curves CSV, one row per subject; last column is the response unless --y is given")
      ->required();
  c->add_option("--y", o.y, "responses file (one column)");
  c->add_option("--grid", o.grid, "grid points file (default: uniform midpoints on [0,1])");
  c->add_flag("--header", o.header, "input files start with a header row");
}

void add_tuning(CLI::App* c, Options& o) {
  c->add_option("--h", o.h, "estimator truncation level");
  c->add_option("--g", o.g, "bootstrap centering truncation level (default h)");
  c->add_option("--k", o.k, "residual truncation level");
  c->add_flag("--rule-of-thumb", o.rule, "g = k, h = round(1.113 k); needs --k");
  c->add_flag("--cv", o.cv, "choose k by repeated cross-validation, then the rule of thumb (default)");
}

void add_bootstrap(CLI::App* c, Options& o) {
  c->add_option("--B", o.B, "bootstrap replicates")->check(CLI::PositiveNumber);
  c->add_option("--level", o.level, "coverage level")->check(CLI::Range(0.0, 1.0));
  c->add_option("--variant", o.variant, "pb, pb_std, naive, naive_std, rb or clt")
      ->check(CLI::IsMember({"pb", "pb_std", "naive", "naive_std", "rb", "clt"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inference for functional linear regression with scalar response"};
  app.set_help_flag("--help", "print this help and exit");  // -h would clash with --h
  app.require_subcommand(1);
  Options o;

  auto* fit = app.add_subcommand("fit", "fit the principal component estimator");
  add_common(fit, o);
  add_data(fit, o);
  add_tuning(fit, o);

  auto* ci = app.add_subcommand("ci", "bootstrap confidence intervals for <beta, x0>");
  add_common(ci, o);
  add_data(ci, o);
  add_tuning(ci, o);
  add_bootstrap(ci, o);
  ci->add_option("--x0", o.x0, "curves to project on, one per row");
  ci->add_option("--interval", o.interval, "symmetrized or percentile")
      ->check(CLI::IsMember({"symmetrized", "percentile"}));
  ci->add_flag("--raw-x0", o.raw_x0, "project x0 as given instead of x0 - mean curve");
  ci->add_flag("--add-mean", o.add_mean, "report mean-response predictions (adds the response mean)");

  auto* test = app.add_subcommand("test", "bootstrap test that the slope is orthogonal to target curves");
  add_common(test, o);
  add_data(test, o);
  add_tuning(test, o);
  add_bootstrap(test, o);
  test->add_option("--targets", o.targets, "target curves, one per row");
  test->add_flag("--enforce-null", o.enforce_null, "impose the null hypothesis in the bootstrap world");
  test->add_flag("--both", o.both, "report both the enforced and the plain bootstrap");

  auto* sim = app.add_subcommand("simulate", "run a Monte Carlo plan");
  add_common(sim, o);
  sim->add_option("plan", o.plan, "plan file (key = value lines)")->required();
  sim->add_option("--reps", o.reps, "override repetitions");
  sim->add_option("--B", o.B, "override bootstrap replicates")->check(CLI::PositiveNumber);
  sim->add_option("--level", o.level, "override coverage level")->check(CLI::Range(0.0, 1.0));

  auto* bias = app.add_subcommand("diagnose-bias", "construction bias of the naive paired bootstrap");
  add_common(bias, o);
  add_data(bias, o);
  add_tuning(bias, o);
  bias->add_option("--x0", o.x0, "curves to project on, one per row");
  bias->add_flag("--raw-x0", o.raw_x0, "project x0 as given instead of x0 - mean curve");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*fit) return cmd_fit(o);
    if (*ci) return cmd_ci(o);
    if (*test) return cmd_test(o);
    if (*sim) return cmd_simulate(o, *sim);
    if (*bias) return cmd_diagnose_bias(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 2;
}
