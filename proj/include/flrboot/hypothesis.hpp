#pragma once

// Bootstrap tests of H0: Pi_X0 beta = 0 for a finite set of target curves X0_1..X0_L,
// with W_L2 = sum_l T_l^2 and W_max = max_l |T_l|.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "flrboot/bootstrap.hpp"
#include "flrboot/errors.hpp"
#include "flrboot/flrm.hpp"
#include "flrboot/hilbert.hpp"

namespace flrboot {

class TargetSet {
 public:
  explicit TargetSet(std::vector<Curve> curves, double rel_tol = 1e-10) : curves_(std::move(curves)) {
    if (curves_.empty()) throw ValidationError("target set needs at least one curve");
    grid_ = curves_.front().grid();
    const Index L = static_cast<Index>(curves_.size());
    const Index m = grid_->size();
    Matrix C(m, L);
    for (Index l = 0; l < L; ++l) {
      require_same_grid(grid_, curves_[static_cast<std::size_t>(l)].grid());
      C.col(l) = curves_[static_cast<std::size_t>(l)].values();
    }
    gram_ = C.transpose() * grid_->weights().asDiagonal() * C;
    gram_ = 0.5 * (gram_ + gram_.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> solver(gram_);
    const Vector vals = solver.eigenvalues().reverse();
    const Matrix vecs = solver.eigenvectors().rowwise().reverse();
    const double top = vals.size() ? std::max(vals[0], 0.0) : 0.0;
    Index r = 0;
    while (r < L && top > 0.0 && vals[r] > rel_tol * top) ++r;
    // Orthonormal basis of the span: C V Lambda^{-1/2}.
    basis_ = C * vecs.leftCols(r) * vals.head(r).cwiseSqrt().cwiseInverse().asDiagonal();
  }

  const GridPtr& grid() const noexcept { return grid_; }
  const std::vector<Curve>& curves() const noexcept { return curves_; }
  Index size() const noexcept { return static_cast<Index>(curves_.size()); }
  const Matrix& gram() const noexcept { return gram_; }
  Index rank() const noexcept { return basis_.cols(); }
  const Matrix& basis() const noexcept { return basis_; }

  // Same targets with `shift` subtracted from each curve.
  TargetSet shifted(const Curve& shift) const {
    std::vector<Curve> out;
    out.reserve(curves_.size());
    for (const auto& c : curves_) out.push_back(c - shift);
    return TargetSet(std::move(out));
  }

 private:
  std::vector<Curve> curves_;
  GridPtr grid_;
  Matrix gram_;
  Matrix basis_;
};

inline Curve project_onto_span(const TargetSet& target, const Curve& f) {
  require_same_grid(target.grid(), f.grid());
  const Matrix& Q = target.basis();
  const Vector c = Q.transpose() * target.grid()->weights().cwiseProduct(f.values());
  return Curve(f.grid(), Q * c);
}

enum class StatisticKind { l2, max };

inline double combine(StatisticKind kind, const Vector& t) {
  return kind == StatisticKind::l2 ? t.squaredNorm() : t.cwiseAbs().maxCoeff();
}

struct ObservedStatistics {
  Vector per_direction;
  double w_l2 = 0.0;
  double w_max = 0.0;
};

inline ObservedStatistics observed_statistics(const ProjectionProblem& P) {
  ObservedStatistics out;
  out.per_direction.resize(P.directions());
  for (Index l = 0; l < P.directions(); ++l) out.per_direction[l] = P.studentized(l);
  out.w_l2 = combine(StatisticKind::l2, out.per_direction);
  out.w_max = combine(StatisticKind::max, out.per_direction);
  return out;
}

// Targets are centered by X_bar unless center_targets is false.
inline ObservedStatistics observed_statistics(const FunctionalDataset& ds, const TargetSet& target,
                                              const TuningChoice& tuning, bool center_targets = true) {
  const ProjectionProblem P(std::make_shared<const ScoreSpace>(ds), target.curves(), tuning, center_targets);
  return observed_statistics(P);
}

struct NullEnforced {
  FunctionalDataset dataset;  // responses Y_i - <P beta_g, X_i>
  Curve beta_tilde_g;         // beta_g - P beta_g
  Curve removed;              // P beta_g
};

inline NullEnforced null_enforced_dataset(const FunctionalDataset& ds, const TargetSet& target, Index g) {
  require_same_grid(ds.grid(), target.grid());
  const FpcrFit fit = fpcr_fit(ds, g);
  const Curve removed = project_onto_span(target, fit.beta_hat);
  const Vector shift = ds.X() * ds.grid()->weights().cwiseProduct(removed.values());
  return NullEnforced{ds.with_responses(ds.y() - shift), fit.beta_hat - removed, removed};
}

struct TestResult {
  StatisticKind statistic_kind = StatisticKind::max;
  double w_observed = 0.0;
  double p_value = 1.0;
  Index B_eff = 0;
  Index degenerate_count = 0;
  bool enforce_null = false;
  Vector per_direction;
  std::vector<double> w_star;
  std::vector<std::string> warnings;
};

inline double bootstrap_p_value(double w, const std::vector<double>& w_star) {
  const auto exceed = std::count_if(w_star.begin(), w_star.end(), [&](double x) { return x >= w; });
  return (1.0 + static_cast<double>(exceed)) / (static_cast<double>(w_star.size()) + 1.0);
}

// Both statistics from one set of replicates; each replicate draws one resample that
// drives all L directions.
inline std::array<TestResult, 2> bootstrap_tests(const FunctionalDataset& ds, const TargetSet& target,
                                                 const BootstrapConfig& config, bool enforce_null,
                                                 bool center_targets = true) {
  config.validate();
  if (config.variant == Variant::residual)
    throw ValidationError("tests use the paired bootstrap; the residual variant is not available");
  require_same_grid(ds.grid(), target.grid());
  auto space = std::make_shared<const ScoreSpace>(ds);
  const TargetSet eff = center_targets ? target.shifted(ds.x_bar()) : target;
  const ProjectionProblem P(space, eff.curves(), config.tuning, false);
  std::vector<std::string> warnings = detail::tuning_warnings(config.tuning);
  if (eff.rank() < eff.size())
    warnings.push_back("target curves span only " + std::to_string(eff.rank()) + " of " +
                       std::to_string(eff.size()) + " dimensions");
  for (const auto& w : warnings) warn(w);

  const ObservedStatistics obs = observed_statistics(P);
  const ProjectionProblem Pb = [&] {
    if (!enforce_null) return P;
    const Curve removed = project_onto_span(eff, space->to_curve(P.beta_g()));
    return P.null_enforced(space->coords(removed));
  }();
  const ReplicateTable table =
      run_replicates(Pb, config.variant, config.studentize, config.B, config.seed, config.workers);

  std::array<TestResult, 2> out;
  const std::array<StatisticKind, 2> kinds{StatisticKind::l2, StatisticKind::max};
  for (std::size_t k = 0; k < 2; ++k) {
    TestResult& r = out[k];
    r.statistic_kind = kinds[k];
    r.w_observed = kinds[k] == StatisticKind::l2 ? obs.w_l2 : obs.w_max;
    r.enforce_null = enforce_null;
    r.per_direction = obs.per_direction;
    r.warnings = warnings;
    Vector t(P.directions());
    for (Index b = 0; b < table.B; ++b) {
      bool bad = false;
      for (Index l = 0; l < table.L; ++l) {
        const ReplicateStat& s = table.at(b, l);
        bad = bad || s.degenerate;
        t[l] = s.t_star;
      }
      if (bad) {
        ++r.degenerate_count;
        continue;
      }
      r.w_star.push_back(combine(kinds[k], t));
    }
    r.B_eff = static_cast<Index>(r.w_star.size());
    if (r.B_eff == 0) throw NumericalError("all bootstrap replicates are degenerate");
    if (r.degenerate_count > 0.05 * static_cast<double>(table.B))
      r.warnings.push_back(std::to_string(r.degenerate_count) + " of " + std::to_string(table.B) +
                           " bootstrap replicates were degenerate and dropped");
    r.p_value = bootstrap_p_value(r.w_observed, r.w_star);
  }
  return out;
}

inline TestResult bootstrap_test(const FunctionalDataset& ds, const TargetSet& target, const BootstrapConfig& config,
                                 bool enforce_null, StatisticKind kind = StatisticKind::max,
                                 bool center_targets = true) {
  auto both = bootstrap_tests(ds, target, config, enforce_null, center_targets);
  return kind == StatisticKind::l2 ? both[0] : both[1];
}

}  // namespace flrboot
