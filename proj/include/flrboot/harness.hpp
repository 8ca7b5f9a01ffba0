#pragma once

// Monte Carlo experiments over a grid of simulation designs: interval coverage and
// width, construction-bias spread, test rejection rates and a normal-approximation
// check. Repetition r of scenario s always draws its data from stream(seed, {s, r}),
// and every method in that repetition shares the same bootstrap seeds.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "flrboot/bootstrap.hpp"
#include "flrboot/dgp.hpp"
#include "flrboot/errors.hpp"
#include "flrboot/flrm.hpp"
#include "flrboot/hypothesis.hpp"
#include "flrboot/io.hpp"
#include "flrboot/parallel.hpp"
#include "flrboot/rng.hpp"

namespace flrboot {

enum class Method { clt, rb, pb, pb_std, naive, naive_std };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::clt: return "clt";
    case Method::rb: return "rb";
    case Method::pb: return "pb";
    case Method::pb_std: return "pb_std";
    case Method::naive: return "naive";
    case Method::naive_std: return "naive_std";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (Method m : {Method::clt, Method::rb, Method::pb, Method::pb_std, Method::naive, Method::naive_std})
    if (s == method_name(m)) return m;
  throw ValidationError("unknown method '" + std::string(s) + "'");
}

// Bootstrap settings behind each method name; clt has none.
inline std::pair<Variant, Scaling> method_bootstrap(Method m) {
  switch (m) {
    case Method::rb: return {Variant::residual, Scaling::bootstrap_scale};
    case Method::pb: return {Variant::pb_modified, Scaling::data_scale};
    case Method::pb_std: return {Variant::pb_modified, Scaling::bootstrap_scale};
    case Method::naive: return {Variant::pb_naive, Scaling::data_scale};
    case Method::naive_std: return {Variant::pb_naive, Scaling::bootstrap_scale};
    case Method::clt: break;
  }
  throw ValidationError("method clt does not bootstrap");
}

inline const char* error_mode_name(ErrorMode e) {
  switch (e) {
    case ErrorMode::homoscedastic_chisq: return "homoscedastic";
    case ErrorMode::heteroscedastic_chisq: return "heteroscedastic";
    case ErrorMode::none: return "none";
  }
  return "?";
}

inline ErrorMode parse_error_mode(std::string_view s) {
  for (ErrorMode e : {ErrorMode::homoscedastic_chisq, ErrorMode::heteroscedastic_chisq, ErrorMode::none})
    if (s == error_mode_name(e)) return e;
  throw ValidationError("unknown error mode '" + std::string(s) + "'");
}

enum class ExperimentKind { coverage, bias, power, clt };
enum class TuningPolicy { rule_of_thumb, explicit_grid, h_offset, h_sweep };

struct ExperimentPlan {
  ExperimentKind kind = ExperimentKind::coverage;
  DgpSpec base;
  std::vector<Index> n{200};
  std::vector<double> a{2.5};
  std::vector<double> b{5.5};
  std::vector<double> nu{5.0};
  std::vector<ErrorMode> error_modes{ErrorMode::heteroscedastic_chisq};
  std::vector<double> p{0.0};
  std::vector<Method> methods{Method::clt, Method::rb, Method::pb_std};

  TuningPolicy tuning = TuningPolicy::rule_of_thumb;
  std::vector<TuningChoice> tunings;  // explicit_grid
  std::vector<Index> h_offsets{2};    // h_offset: g = k = default, h = g + offset
  std::vector<Index> h_values;        // h_sweep: g = k = default, h from the list

  Index bias_g = 0;  // 0: default k
  std::vector<double> bias_ratios{1.0, 1.5, 2.0};

  std::vector<bool> enforce{true, false};
  StatisticKind statistic = StatisticKind::max;
  double test_level = 0.05;

  Index reps = 500;
  int B = 500;
  double level = 0.95;
  IntervalKind interval = IntervalKind::symmetrized;
  std::uint64_t seed = 0;
  bool has_seed = false;
  unsigned workers = 1;
  double max_failed_fraction = 0.05;

  void validate() const {
    if (reps < 1) throw ValidationError("plan needs reps >= 1");
    if (B < 1) throw ValidationError("plan needs B >= 1");
    if (!(level > 0.0 && level < 1.0)) throw ValidationError("coverage level must lie in (0, 1)");
    if (!(test_level > 0.0 && test_level < 1.0)) throw ValidationError("test level must lie in (0, 1)");
    if (n.empty() || a.empty() || b.empty() || nu.empty() || error_modes.empty())
      throw ValidationError("every scenario dimension needs at least one value");
    if (kind == ExperimentKind::coverage && methods.empty()) throw ValidationError("plan lists no methods");
    if (kind == ExperimentKind::power && (p.empty() || enforce.empty()))
      throw ValidationError("power plan needs proportions and enforcement flags");
    if (kind == ExperimentKind::bias && bias_ratios.empty()) throw ValidationError("bias plan lists no h/g ratios");
    for (double r : bias_ratios)
      if (!(r >= 1.0)) throw ValidationError("h/g ratios must be >= 1");
    if (tuning == TuningPolicy::explicit_grid && tunings.empty()) throw ValidationError("explicit tuning list is empty");
    if (tuning == TuningPolicy::h_sweep && h_values.empty()) throw ValidationError("h sweep lists no h values");
    if (tuning == TuningPolicy::h_offset && h_offsets.empty()) throw ValidationError("h offset list is empty");
    for (const auto& s : scenarios()) s.validate();
  }

  std::vector<DgpSpec> scenarios() const {
    std::vector<DgpSpec> out;
    const std::vector<double> ps = kind == ExperimentKind::power ? p : std::vector<double>{base.hypothesis_p};
    for (Index nn : n)
      for (double aa : a)
        for (double bb : b)
          for (double vv : nu)
            for (ErrorMode e : error_modes)
              for (double pp : ps) {
                DgpSpec s = base;
                s.n = nn;
                s.a = aa;
                s.b = bb;
                s.nu = vv;
                s.error_mode = e;
                s.hypothesis_p = pp;
                if (kind == ExperimentKind::power) s.slope_mode = SlopeMode::h1;
                out.push_back(s);
              }
    return out;
  }
};

// Truncation levels to evaluate for one scenario; the sample rank is min(J, n - 1).
inline std::vector<TuningChoice> tunings_for(const ExperimentPlan& plan, const DgpSpec& spec) {
  const Index rank = std::min(spec.J, spec.n - 1);
  const Index k = std::min(default_k(spec), rank);
  std::vector<TuningChoice> out;
  if (plan.kind == ExperimentKind::bias) {
    const Index g = plan.bias_g > 0 ? plan.bias_g : k;
    for (double r : plan.bias_ratios)
      out.push_back({g, static_cast<Index>(std::lround(r * static_cast<double>(g))), g});
  } else {
    switch (plan.tuning) {
      case TuningPolicy::rule_of_thumb: out.push_back(rule_of_thumb(k, rank)); break;
      case TuningPolicy::explicit_grid: out = plan.tunings; break;
      case TuningPolicy::h_offset:
        for (Index off : plan.h_offsets) out.push_back({k, k + off, k});
        break;
      case TuningPolicy::h_sweep:
        for (Index h : plan.h_values) out.push_back({k, h, k});
        break;
    }
  }
  for (const auto& t : out) t.validate(rank);
  return out;
}

struct ResultRow {
  Index scenario_id = 0;
  Index n = 0;
  double a = 0.0;
  double b = 0.0;
  double nu = 0.0;
  std::string error_mode;
  std::string method;
  Index k = 0;
  Index h = 0;
  Index g = 0;
  Index reps = 0;  // repetitions that produced a result
  std::optional<double> coverage;
  std::optional<double> mean_width;
  std::optional<double> rejection_rate;
  double mc_se = 0.0;
  Index failed_reps = 0;

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

inline const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols{"scenario_id", "n",  "a",        "b",          "nu",
                                             "error_mode",  "method", "k",   "h",          "g",
                                             "reps",        "coverage", "mean_width", "rejection_rate", "mc_se",
                                             "failed_reps"};
  return cols;
}

inline double binomial_se(double rate, Index reps) {
  return reps > 0 ? std::sqrt(rate * (1.0 - rate) / static_cast<double>(reps)) : 0.0;
}

namespace detail {

inline ResultRow row_base(Index id, const DgpSpec& s, const std::string& method, const TuningChoice& t) {
  ResultRow r;
  r.scenario_id = id;
  r.n = s.n;
  r.a = s.a;
  r.b = s.b;
  r.nu = s.nu;
  r.error_mode = error_mode_name(s.error_mode);
  r.method = method;
  r.k = t.k;
  r.h = t.h;
  r.g = t.g;
  return r;
}

inline void check_failures(const ExperimentPlan& plan, Index failed, const std::string& what) {
  if (static_cast<double>(failed) > plan.max_failed_fraction * static_cast<double>(plan.reps))
    throw NumericalError("experiment aborted: " + std::to_string(failed) + " of " + std::to_string(plan.reps) +
                         " repetitions failed for " + what);
}

inline std::uint64_t bootstrap_seed(const ExperimentPlan& plan, std::size_t scenario, std::size_t rep) {
  return derive_seed(plan.seed, {scenario, rep, 0xb0075ULL});
}

}  // namespace detail

// Interval for one method on a prepared problem (direction 0).
inline Interval method_interval(const ProjectionProblem& P, Method m, const ExperimentPlan& plan,
                                std::uint64_t seed) {
  if (m == Method::clt) return clt_interval(P, 0, plan.level);
  const auto [variant, scaling] = method_bootstrap(m);
  BootstrapConfig cfg;
  cfg.B = plan.B;
  cfg.tuning = P.tuning();
  cfg.variant = variant;
  cfg.studentize = scaling;
  cfg.interval = plan.interval;
  cfg.level = plan.level;
  cfg.seed = seed;
  cfg.workers = 1;
  return confidence_interval(P, cfg).interval;
}

struct CoverageOutcome {
  bool ok = false;
  bool covered = false;
  double width = 0.0;
};

inline std::vector<ResultRow> run_coverage(const ExperimentPlan& plan) {
  plan.validate();
  const auto specs = plan.scenarios();
  std::vector<ResultRow> rows;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const Design design = make_design(specs[s]);
    const auto tunings = tunings_for(plan, specs[s]);
    const std::size_t T = tunings.size(), M = plan.methods.size();
    std::vector<CoverageOutcome> out(static_cast<std::size_t>(plan.reps) * T * M);
    parallel_for(static_cast<std::size_t>(plan.reps), plan.workers, [&](std::size_t r) {
      Engine eng = stream(plan.seed, {s, r});
      const GeneratedSample sample = gen_dataset(design, eng);
      std::shared_ptr<const ScoreSpace> space;
      try {
        space = std::make_shared<const ScoreSpace>(sample.dataset);
      } catch (const Error&) {
        return;
      }
      const std::uint64_t bseed = detail::bootstrap_seed(plan, s, r);
      for (std::size_t t = 0; t < T; ++t) {
        try {
          const ProjectionProblem P(space, {sample.x0}, tunings[t], false);
          for (std::size_t m = 0; m < M; ++m) {
            CoverageOutcome& o = out[(r * T + t) * M + m];
            try {
              const Interval iv = method_interval(P, plan.methods[m], plan, bseed);
              // rounding slack so an exact fit with a collapsed interval still counts as covering
              const double tol = 1e-9 * (1.0 + std::abs(sample.true_projection));
              o = {true, iv.lo - tol <= sample.true_projection && sample.true_projection <= iv.hi + tol,
                   iv.hi - iv.lo};
            } catch (const Error&) {
            }
          }
        } catch (const Error&) {
        }
      }
    });
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t m = 0; m < M; ++m) {
        ResultRow row = detail::row_base(static_cast<Index>(s), specs[s], method_name(plan.methods[m]), tunings[t]);
        Index used = 0, hits = 0;
        double width = 0.0;
        for (std::size_t r = 0; r < static_cast<std::size_t>(plan.reps); ++r) {
          const CoverageOutcome& o = out[(r * T + t) * M + m];
          if (!o.ok) continue;
          ++used;
          hits += o.covered;
          width += o.width;
        }
        row.reps = used;
        row.failed_reps = plan.reps - used;
        if (used > 0) {
          row.coverage = static_cast<double>(hits) / static_cast<double>(used);
          row.mean_width = width / static_cast<double>(used);
          row.mc_se = binomial_se(*row.coverage, used);
        }
        detail::check_failures(plan, row.failed_reps, row.method + " in scenario " + std::to_string(s));
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

struct BiasResult {
  Index scenario_id = 0;
  DgpSpec spec;
  double ratio = 1.0;
  TuningChoice tuning;
  std::vector<double> samples;  // successful repetitions, in repetition order
  Index failed_reps = 0;
  double sigma_tau = std::numeric_limits<double>::quiet_NaN();  // theory value when rho_j == 1

  double sd() const {
    if (samples.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : samples) mean += x;
    mean /= static_cast<double>(samples.size());
    double ss = 0.0;
    for (double x : samples) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(samples.size() - 1));
  }
};

inline std::vector<BiasResult> run_bias_density(const ExperimentPlan& plan) {
  ExperimentPlan p = plan;
  p.kind = ExperimentKind::bias;
  p.validate();
  const auto specs = p.scenarios();
  std::vector<BiasResult> results;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const Design design = make_design(specs[s]);
    const auto tunings = tunings_for(p, specs[s]);
    const std::size_t T = tunings.size();
    std::vector<double> vals(static_cast<std::size_t>(p.reps) * T, std::numeric_limits<double>::quiet_NaN());
    parallel_for(static_cast<std::size_t>(p.reps), p.workers, [&](std::size_t r) {
      Engine eng = stream(p.seed, {s, r});
      const GeneratedSample sample = gen_dataset(design, eng);
      try {
        auto space = std::make_shared<const ScoreSpace>(sample.dataset);
        for (std::size_t t = 0; t < T; ++t) {
          try {
            const ProjectionProblem P(space, {sample.x0}, tunings[t], false);
            vals[r * T + t] = construction_bias(P, 0);
          } catch (const Error&) {
          }
        }
      } catch (const Error&) {
      }
    });
    for (std::size_t t = 0; t < T; ++t) {
      BiasResult br;
      br.scenario_id = static_cast<Index>(s);
      br.spec = specs[s];
      br.ratio = p.bias_ratios[t];
      br.tuning = tunings[t];
      for (std::size_t r = 0; r < static_cast<std::size_t>(p.reps); ++r) {
        const double v = vals[r * T + t];
        if (std::isfinite(v))
          br.samples.push_back(v);
        else
          ++br.failed_reps;
      }
      if (specs[s].error_mode == ErrorMode::heteroscedastic_chisq) {
        const std::vector<double> g(design.gamma.data(), design.gamma.data() + design.gamma.size());
        const std::vector<double> rho(g.size(), 1.0);
        const std::vector<double> beta(design.beta_coefficients.data(),
                                       design.beta_coefficients.data() + design.beta_coefficients.size());
        br.sigma_tau = sigma_tau(static_cast<double>(br.tuning.h) / static_cast<double>(br.tuning.g), g, rho, beta);
      }
      detail::check_failures(p, br.failed_reps, "h/g = " + format_number(br.ratio));
      results.push_back(std::move(br));
    }
  }
  return results;
}

// Histogram density of the samples on `bins` equal bins spanning their range.
inline std::vector<std::pair<double, double>> binned_density(const std::vector<double>& x, int bins = 30) {
  std::vector<std::pair<double, double>> out;
  if (x.empty() || bins < 1) return out;
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  double lo = *mn, hi = *mx;
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double w = (hi - lo) / bins;
  std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
  for (double v : x) {
    auto i = static_cast<int>((v - lo) / w);
    counts[static_cast<std::size_t>(std::clamp(i, 0, bins - 1))] += 1.0;
  }
  for (int i = 0; i < bins; ++i)
    out.emplace_back(lo + (i + 0.5) * w, counts[static_cast<std::size_t>(i)] / (static_cast<double>(x.size()) * w));
  return out;
}

inline std::string power_method_name(StatisticKind kind, bool enforce) {
  return std::string("test_") + (kind == StatisticKind::l2 ? "l2" : "max") + (enforce ? "_enforced" : "_plain");
}

// Targets are the first six basis functions; rejection when the p-value is at most test_level.
inline std::vector<ResultRow> run_power(const ExperimentPlan& plan) {
  ExperimentPlan p = plan;
  p.kind = ExperimentKind::power;
  p.validate();
  const auto specs = p.scenarios();
  std::vector<ResultRow> rows;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const Design design = make_design(specs[s]);
    const auto tunings = tunings_for(p, specs[s]);
    const TargetSet targets(fourier_basis(6, design.grid));
    const std::size_t T = tunings.size(), E = p.enforce.size();
    // 0 failed, 1 accepted, 2 rejected
    std::vector<int> out(static_cast<std::size_t>(p.reps) * T * E, 0);
    parallel_for(static_cast<std::size_t>(p.reps), p.workers, [&](std::size_t r) {
      Engine eng = stream(p.seed, {s, r});
      const GeneratedSample sample = gen_dataset(design, eng);
      for (std::size_t t = 0; t < T; ++t) {
        BootstrapConfig cfg;
        cfg.B = p.B;
        cfg.tuning = tunings[t];
        cfg.variant = Variant::pb_modified;
        cfg.studentize = Scaling::bootstrap_scale;
        cfg.seed = detail::bootstrap_seed(p, s, r);
        cfg.workers = 1;
        for (std::size_t e = 0; e < E; ++e) {
          try {
            const TestResult res = bootstrap_test(sample.dataset, targets, cfg, p.enforce[e], p.statistic, false);
            out[(r * T + t) * E + e] = res.p_value <= p.test_level ? 2 : 1;
          } catch (const Error&) {
          }
        }
      }
    });
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t e = 0; e < E; ++e) {
        ResultRow row =
            detail::row_base(static_cast<Index>(s), specs[s], power_method_name(p.statistic, p.enforce[e]), tunings[t]);
        Index used = 0, rejected = 0;
        for (std::size_t r = 0; r < static_cast<std::size_t>(p.reps); ++r) {
          const int v = out[(r * T + t) * E + e];
          if (v == 0) continue;
          ++used;
          rejected += v == 2;
        }
        row.reps = used;
        row.failed_reps = p.reps - used;
        if (used > 0) {
          row.rejection_rate = static_cast<double>(rejected) / static_cast<double>(used);
          row.mc_se = binomial_se(*row.rejection_rate, used);
        }
        detail::check_failures(p, row.failed_reps, row.method + " in scenario " + std::to_string(s));
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

struct CltResult {
  Index scenario_id = 0;
  DgpSpec spec;
  TuningChoice tuning;
  std::vector<double> statistics;  // T_n = sqrt(n / s_h) (<beta_h, X0> - <beta, X0>)
  Index failed_reps = 0;
  double ks = 1.0;
};

// sup_x |F_N(x) - Phi(x)|.
inline double ks_distance_normal(std::vector<double> x) {
  if (x.empty()) return 1.0;
  std::sort(x.begin(), x.end());
  const boost::math::normal nd;
  const double N = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double F = boost::math::cdf(nd, x[i]);
    d = std::max({d, static_cast<double>(i + 1) / N - F, F - static_cast<double>(i) / N});
  }
  return d;
}

inline std::vector<CltResult> run_clt_check(const ExperimentPlan& plan) {
  ExperimentPlan p = plan;
  p.kind = ExperimentKind::clt;
  p.validate();
  const auto specs = p.scenarios();
  std::vector<CltResult> results;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const Design design = make_design(specs[s]);
    const auto tunings = tunings_for(p, specs[s]);
    const std::size_t T = tunings.size();
    std::vector<double> vals(static_cast<std::size_t>(p.reps) * T, std::numeric_limits<double>::quiet_NaN());
    parallel_for(static_cast<std::size_t>(p.reps), p.workers, [&](std::size_t r) {
      Engine eng = stream(p.seed, {s, r});
      const GeneratedSample sample = gen_dataset(design, eng);
      try {
        auto space = std::make_shared<const ScoreSpace>(sample.dataset);
        for (std::size_t t = 0; t < T; ++t) {
          try {
            const ProjectionProblem P(space, {sample.x0}, tunings[t], false);
            vals[r * T + t] = P.studentized(0, sample.true_projection);
          } catch (const Error&) {
          }
        }
      } catch (const Error&) {
      }
    });
    for (std::size_t t = 0; t < T; ++t) {
      CltResult cr;
      cr.scenario_id = static_cast<Index>(s);
      cr.spec = specs[s];
      cr.tuning = tunings[t];
      for (std::size_t r = 0; r < static_cast<std::size_t>(p.reps); ++r) {
        const double v = vals[r * T + t];
        if (std::isfinite(v))
          cr.statistics.push_back(v);
        else
          ++cr.failed_reps;
      }
      cr.ks = ks_distance_normal(cr.statistics);
      detail::check_failures(p, cr.failed_reps, "scenario " + std::to_string(s));
      results.push_back(std::move(cr));
    }
  }
  return results;
}

// ---- output ----------------------------------------------------------------

inline void emit_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  write_csv_row(out, result_columns());
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  for (const auto& r : rows) {
    write_csv_row(out, {std::to_string(r.scenario_id), std::to_string(r.n), format_number(r.a), format_number(r.b),
                        format_number(r.nu), r.error_mode, r.method, std::to_string(r.k), std::to_string(r.h),
                        std::to_string(r.g), std::to_string(r.reps), opt(r.coverage), opt(r.mean_width),
                        opt(r.rejection_rate), format_number(r.mc_se), std::to_string(r.failed_reps)});
  }
}

inline std::vector<ResultRow> parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("results file is empty");
  if (split_csv_line(line) != result_columns()) throw ParseError("unexpected results header", 1);
  std::vector<ResultRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != result_columns().size()) throw ParseError("wrong number of columns", lineno);
    auto num = [&](std::size_t i) {
      double v;
      if (!parse_double(c[i], v)) throw ParseError("bad number '" + c[i] + "'", lineno, i + 1);
      return v;
    };
    auto idx = [&](std::size_t i) { return static_cast<Index>(num(i)); };
    auto opt = [&](std::size_t i) -> std::optional<double> {
      if (c[i].empty()) return std::nullopt;
      return num(i);
    };
    ResultRow r;
    r.scenario_id = idx(0);
    r.n = idx(1);
    r.a = num(2);
    r.b = num(3);
    r.nu = num(4);
    r.error_mode = c[5];
    r.method = c[6];
    r.k = idx(7);
    r.h = idx(8);
    r.g = idx(9);
    r.reps = idx(10);
    r.coverage = opt(11);
    r.mean_width = opt(12);
    r.rejection_rate = opt(13);
    r.mc_se = num(14);
    r.failed_reps = idx(15);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void emit_scenarios_csv(std::ostream& out, const ExperimentPlan& plan) {
  write_csv_row(out, {"scenario_id", "n", "a", "b", "nu", "error_mode", "p", "J", "slope_scale", "grid_size"});
  const auto specs = plan.scenarios();
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const DgpSpec& d = specs[s];
    write_csv_row(out, {std::to_string(s), std::to_string(d.n), format_number(d.a), format_number(d.b),
                        format_number(d.nu), error_mode_name(d.error_mode), format_number(d.hypothesis_p),
                        std::to_string(d.J), format_number(d.slope_scale), std::to_string(d.grid_size)});
  }
}

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

// Minimal static line plot.
inline std::string svg_line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                 const std::vector<Series>& series, std::optional<double> reference = std::nullopt) {
  const double W = 640, H = 420, L = 70, R = 170, T = 40, Bm = 55;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (reference) {
    y0 = std::min(y0, *reference);
    y1 = std::max(y1, *reference);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - Bm - (y - y0) / (y1 - y0) * (H - T - Bm); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - Bm << "\" x2=\"" << W - R << "\" y2=\"" << H - Bm << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - Bm << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - Bm + 16 << "\" text-anchor=\"middle\">" << format_number(std::round(xv * 1000) / 1000) << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << format_number(std::round(yv * 1000) / 1000) << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  o << "<text x=\"16\" y=\"" << (T + H - Bm) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (T + H - Bm) / 2 << ")\">" << ylabel << "</text>\n";
  if (reference)
    o << "<line x1=\"" << L << "\" y1=\"" << py(*reference) << "\" x2=\"" << W - R << "\" y2=\"" << py(*reference)
      << "\" stroke=\"black\" stroke-dasharray=\"4 3\"/>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* col = colors[i % 8];
    std::ostringstream pts;
    for (const auto& [x, y] : series[i].points)
      if (std::isfinite(x) && std::isfinite(y)) pts << px(x) << ',' << py(y) << ' ';
    o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"" << pts.str() << "\"/>\n";
    for (const auto& [x, y] : series[i].points)
      if (std::isfinite(x) && std::isfinite(y))
        o << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << col << "\"/>\n";
    o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (i + 1) << "\" fill=\"" << col << "\">" << series[i].name << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + path.string());
  f << text;
}

// Coverage, width or rejection against h (coverage) or p (power), one plot per scenario group.
inline void emit_result_plots(const std::filesystem::path& dir, const std::vector<ResultRow>& rows,
                              const ExperimentPlan& plan) {
  const auto specs = plan.scenarios();
  if (plan.kind == ExperimentKind::power) {
    std::map<std::string, Series> by;
    for (const auto& r : rows) {
      if (!r.rejection_rate) continue;
      const std::string key = r.method + " n=" + std::to_string(r.n) + " h=" + std::to_string(r.h);
      by[key].name = key;
      by[key].points.emplace_back(specs[static_cast<std::size_t>(r.scenario_id)].hypothesis_p, *r.rejection_rate);
    }
    std::vector<Series> ser;
    for (auto& [k, s] : by) ser.push_back(std::move(s));
    write_text(dir / "rejection.svg", svg_line_plot("Rejection rate", "p", "rejection rate", ser, plan.test_level));
    return;
  }
  std::map<Index, std::map<std::string, std::pair<Series, Series>>> by;
  for (const auto& r : rows) {
    auto& [cov, wid] = by[r.scenario_id][r.method];
    cov.name = wid.name = r.method;
    if (r.coverage) cov.points.emplace_back(static_cast<double>(r.h), *r.coverage);
    if (r.mean_width) wid.points.emplace_back(static_cast<double>(r.h), *r.mean_width);
  }
  for (auto& [id, methods] : by) {
    std::vector<Series> cs, ws;
    for (auto& [name, pr] : methods) {
      cs.push_back(pr.first);
      ws.push_back(pr.second);
    }
    const DgpSpec& d = specs[static_cast<std::size_t>(id)];
    const std::string label = "n=" + std::to_string(d.n) + " a=" + format_number(d.a) + " b=" + format_number(d.b) +
                              " nu=" + format_number(d.nu) + " " + error_mode_name(d.error_mode);
    write_text(dir / ("coverage_s" + std::to_string(id) + ".svg"),
               svg_line_plot("Coverage, " + label, "h", "coverage", cs, plan.level));
    write_text(dir / ("width_s" + std::to_string(id) + ".svg"),
               svg_line_plot("Mean width, " + label, "h", "mean width", ws));
  }
}

inline void emit_bias(const std::filesystem::path& dir, const std::vector<BiasResult>& res) {
  std::ofstream samples(dir / "bias_samples.csv", std::ios::binary);
  write_csv_row(samples, {"scenario_id", "ratio", "k", "h", "g", "index", "bias"});
  std::ofstream summary(dir / "bias_summary.csv", std::ios::binary);
  write_csv_row(summary, {"scenario_id", "n", "a", "b", "nu", "error_mode", "ratio", "k", "h", "g", "reps", "sd",
                          "sigma_tau", "failed_reps"});
  std::ofstream dens(dir / "bias_density.csv", std::ios::binary);
  write_csv_row(dens, {"scenario_id", "ratio", "x", "density"});
  std::vector<Series> ser;
  for (const auto& b : res) {
    for (std::size_t i = 0; i < b.samples.size(); ++i)
      write_csv_row(samples, {std::to_string(b.scenario_id), format_number(b.ratio), std::to_string(b.tuning.k),
                              std::to_string(b.tuning.h), std::to_string(b.tuning.g), std::to_string(i),
                              format_number(b.samples[i])});
    write_csv_row(summary, {std::to_string(b.scenario_id), std::to_string(b.spec.n), format_number(b.spec.a),
                            format_number(b.spec.b), format_number(b.spec.nu), error_mode_name(b.spec.error_mode),
                            format_number(b.ratio), std::to_string(b.tuning.k), std::to_string(b.tuning.h),
                            std::to_string(b.tuning.g), std::to_string(b.samples.size()), format_number(b.sd()),
                            format_number(b.sigma_tau), std::to_string(b.failed_reps)});
    Series s{"s" + std::to_string(b.scenario_id) + " h/g=" + format_number(b.ratio), binned_density(b.samples)};
    for (const auto& [x, d] : s.points)
      write_csv_row(dens, {std::to_string(b.scenario_id), format_number(b.ratio), format_number(x), format_number(d)});
    ser.push_back(std::move(s));
  }
  write_text(dir / "bias_density.svg", svg_line_plot("Construction bias density", "B_n", "density", ser));
}

inline void emit_clt(const std::filesystem::path& dir, const std::vector<CltResult>& res) {
  std::ofstream out(dir / "clt.csv", std::ios::binary);
  write_csv_row(out, {"scenario_id", "n", "a", "b", "nu", "error_mode", "k", "h", "g", "reps", "ks_distance",
                      "failed_reps"});
  for (const auto& c : res)
    write_csv_row(out, {std::to_string(c.scenario_id), std::to_string(c.spec.n), format_number(c.spec.a),
                        format_number(c.spec.b), format_number(c.spec.nu), error_mode_name(c.spec.error_mode),
                        std::to_string(c.tuning.k), std::to_string(c.tuning.h), std::to_string(c.tuning.g),
                        std::to_string(c.statistics.size()), format_number(c.ks), std::to_string(c.failed_reps)});
}

// Runs the plan and writes every output file into dir.
inline void run_experiment(const ExperimentPlan& plan, const std::filesystem::path& dir) {
  plan.validate();
  std::filesystem::create_directories(dir);
  {
    std::ofstream sc(dir / "scenarios.csv", std::ios::binary);
    emit_scenarios_csv(sc, plan);
  }
  switch (plan.kind) {
    case ExperimentKind::coverage:
    case ExperimentKind::power: {
      const auto rows = plan.kind == ExperimentKind::coverage ? run_coverage(plan) : run_power(plan);
      std::ofstream out(dir / "results.csv", std::ios::binary);
      emit_csv(out, rows);
      emit_result_plots(dir, rows, plan);
      break;
    }
    case ExperimentKind::bias: emit_bias(dir, run_bias_density(plan)); break;
    case ExperimentKind::clt: emit_clt(dir, run_clt_check(plan)); break;
  }
}

// ---- plan files ---------------------------------------------------------------
//
// Flat "key = value" lines; lists are comma separated; '#' starts a comment.

namespace detail {

inline std::vector<std::string> list_of(const std::string& v) {
  std::vector<std::string> out;
  for (auto& s : split_csv_line(v))
    if (!s.empty()) out.push_back(s);
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  double x;
  if (!parse_double(v, x)) throw ValidationError("plan key '" + key + "': '" + v + "' is not a number");
  return x;
}

inline Index to_index(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (x != std::floor(x) || !std::isfinite(x)) throw ValidationError("plan key '" + key + "': '" + v + "' is not an integer");
  return static_cast<Index>(x);
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ValidationError("plan key '" + key + "': '" + v + "' is not an unsigned integer");
  return x;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError("plan key '" + key + "': '" + v + "' is not a boolean");
}

}  // namespace detail

inline void set_plan_value(ExperimentPlan& plan, const std::string& key, const std::string& value) {
  using namespace detail;
  const auto items = list_of(value);
  auto doubles = [&] {
    std::vector<double> v;
    for (auto& s : items) v.push_back(to_double(key, s));
    return v;
  };
  auto indices = [&] {
    std::vector<Index> v;
    for (auto& s : items) v.push_back(to_index(key, s));
    return v;
  };
  if (key == "experiment") {
    if (value == "coverage") plan.kind = ExperimentKind::coverage;
    else if (value == "bias") plan.kind = ExperimentKind::bias;
    else if (value == "power") plan.kind = ExperimentKind::power;
    else if (value == "clt") plan.kind = ExperimentKind::clt;
    else throw ValidationError("unknown experiment '" + value + "'");
  } else if (key == "n") plan.n = indices();
  else if (key == "a") plan.a = doubles();
  else if (key == "b") plan.b = doubles();
  else if (key == "nu") plan.nu = doubles();
  else if (key == "error_mode") {
    plan.error_modes.clear();
    for (auto& s : items) plan.error_modes.push_back(parse_error_mode(s));
  } else if (key == "p") plan.p = doubles();
  else if (key == "methods") {
    plan.methods.clear();
    for (auto& s : items) plan.methods.push_back(parse_method(s));
  } else if (key == "tuning") {
    if (value == "rule_of_thumb") plan.tuning = TuningPolicy::rule_of_thumb;
    else if (value == "explicit") plan.tuning = TuningPolicy::explicit_grid;
    else if (value == "h_offset") plan.tuning = TuningPolicy::h_offset;
    else if (value == "h_sweep") plan.tuning = TuningPolicy::h_sweep;
    else throw ValidationError("unknown tuning policy '" + value + "'");
  } else if (key == "tunings") {
    // k:h:g triples
    plan.tunings.clear();
    for (auto& s : items) {
      TuningChoice t;
      char c1 = 0, c2 = 0;
      std::istringstream is(s);
      if (!(is >> t.k >> c1 >> t.h >> c2 >> t.g) || c1 != ':' || c2 != ':' || !is.eof())
        throw ValidationError("plan key 'tunings': '" + s + "' is not k:h:g");
      plan.tunings.push_back(t);
    }
  } else if (key == "h_offsets") plan.h_offsets = indices();
  else if (key == "h_values") plan.h_values = indices();
  else if (key == "bias_g") plan.bias_g = to_index(key, value);
  else if (key == "bias_ratios") plan.bias_ratios = doubles();
  else if (key == "enforce") {
    plan.enforce.clear();
    for (auto& s : items) plan.enforce.push_back(to_bool(key, s));
  } else if (key == "statistic") {
    if (value == "max") plan.statistic = StatisticKind::max;
    else if (value == "l2") plan.statistic = StatisticKind::l2;
    else throw ValidationError("unknown statistic '" + value + "'");
  } else if (key == "test_level") plan.test_level = to_double(key, value);
  else if (key == "reps") plan.reps = to_index(key, value);
  else if (key == "B") plan.B = static_cast<int>(to_index(key, value));
  else if (key == "level") plan.level = to_double(key, value);
  else if (key == "interval") {
    if (value == "symmetrized") plan.interval = IntervalKind::symmetrized;
    else if (value == "percentile") plan.interval = IntervalKind::percentile;
    else throw ValidationError("unknown interval kind '" + value + "'");
  } else if (key == "seed") {
    plan.seed = to_u64(key, value);
    plan.has_seed = true;
  }
  else if (key == "workers") plan.workers = static_cast<unsigned>(to_index(key, value));
  else if (key == "J") plan.base.J = to_index(key, value);
  else if (key == "grid_size") plan.base.grid_size = to_index(key, value);
  else if (key == "slope_scale") plan.base.slope_scale = to_double(key, value);
  else if (key == "standardize_xi") plan.base.standardize_xi = to_bool(key, value);
  else if (key == "slope_signs_seed") plan.base.slope_signs_seed = to_u64(key, value);
  else if (key == "spectrum") {
    if (value == "gaps") plan.base.spectrum = SpectrumKind::gaps;
    else if (value == "literal") plan.base.spectrum = SpectrumKind::literal;
    else throw ValidationError("unknown spectrum '" + value + "'");
  } else if (key == "slope") {
    if (value == "simulation") plan.base.slope_mode = SlopeMode::simulation;
    else if (value == "h0") plan.base.slope_mode = SlopeMode::h0;
    else if (value == "h1") plan.base.slope_mode = SlopeMode::h1;
    else throw ValidationError("unknown slope mode '" + value + "'");
  } else if (key == "max_failed_fraction") plan.max_failed_fraction = to_double(key, value);
  else throw ValidationError("unknown plan key '" + key + "'");
}

inline ExperimentPlan parse_plan(std::istream& in) {
  ExperimentPlan plan;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key = value", lineno);
    const std::string key(trim(t.substr(0, eq)));
    const std::string value(trim(t.substr(eq + 1)));
    try {
      set_plan_value(plan, key, value);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return plan;
}

inline ExperimentPlan load_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return parse_plan(in);
}

}  // namespace flrboot
