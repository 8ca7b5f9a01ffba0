#pragma once

// Bootstrap approximations for the studentized projection statistic
//   T_n(x0) = sqrt(n / s_h(x0)) (<beta_h, x0> - <beta, x0>).
//
// Paired resamples are recreated with the debiased estimator
//   beta*_h = (Gamma*_h)^-1 (Delta*_n - U_{n,g}),
// centered at <beta_g, x0>. The naive variant drops U_{n,g}; the residual bootstrap
// keeps the design fixed and is included as the homoscedastic baseline.

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flrboot/errors.hpp"
#include "flrboot/flrm.hpp"
#include "flrboot/hilbert.hpp"
#include "flrboot/parallel.hpp"
#include "flrboot/rng.hpp"

namespace flrboot {

enum class Variant { pb_modified, pb_naive, residual };
enum class Scaling { data_scale, bootstrap_scale };
enum class IntervalKind { symmetrized, percentile };

struct BootstrapConfig {
  int B = 500;
  TuningChoice tuning{};
  Variant variant = Variant::pb_modified;
  Scaling studentize = Scaling::bootstrap_scale;
  IntervalKind interval = IntervalKind::symmetrized;
  double level = 0.95;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  // Project x0 - X_bar (the default) or x0 as given when the population mean is known to be 0.
  bool center_x0 = true;

  void validate() const {
    if (B < 1) throw ValidationError("bootstrap needs B >= 1");
    if (!(level > 0.0 && level < 1.0)) throw ValidationError("coverage level must lie in (0, 1)");
  }
};

struct ReplicateStat {
  double t_star = std::numeric_limits<double>::quiet_NaN();
  double projection_star = std::numeric_limits<double>::quiet_NaN();
  double scale_used = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;
};

// Everything a replicate needs that does not depend on the resample, for L directions.
class ProjectionProblem {
 public:
  ProjectionProblem(std::shared_ptr<const ScoreSpace> space, const std::vector<Curve>& directions,
                    TuningChoice tuning, bool center_directions = true)
      : space_(std::move(space)), tuning_(tuning) {
    if (directions.empty()) throw ValidationError("at least one projection direction is needed");
    tuning_.validate(space_->rank());
    const Index r = space_->rank();
    const Index L = static_cast<Index>(directions.size());
    x0_.resize(r, L);
    for (Index l = 0; l < L; ++l) {
      const Curve& d = directions[static_cast<std::size_t>(l)];
      require_same_grid(space_->grid(), d.grid());
      x0_.col(l) = center_directions ? space_->coords(Curve(d.grid(), d.values() - space_->x_bar()))
                                     : space_->coords(d);
    }
    y_ = space_->y();
    const Vector delta = space_->cross_covariance();
    beta_h_ = space_->truncated_inverse(tuning_.h, delta);
    beta_g_ = space_->truncated_inverse(tuning_.g, delta);
    beta_k_ = space_->truncated_inverse(tuning_.k, delta);
    resid_g_ = space_->residuals(beta_g_);
    resid_k_ = space_->residuals(beta_k_);
    const double nd = static_cast<double>(n());
    u_hat_ = space_->scores().transpose() * (resid_g_.array() - resid_g_.mean()).matrix() / nd;

    Matrix A = space_->scores().array().colwise() * resid_k_.array();
    A.rowwise() -= A.colwise().mean();
    lambda_ = A.transpose() * A / nd;
    sigma2_k_ = (resid_k_.array() - resid_k_.mean()).square().mean();

    s_hat_.resize(L);
    s_hom_.resize(L);
    s_floor_.resize(L);
    const double y_scale = y_.squaredNorm() / nd;
    for (Index l = 0; l < L; ++l) {
      const Vector a = space_->truncated_inverse(tuning_.h, x0_.col(l));
      const double th = x0_.col(l).head(tuning_.h).cwiseAbs2().cwiseQuotient(space_->eigenvalues().head(tuning_.h)).sum();
      s_hat_[l] = std::max(0.0, a.dot(lambda_ * a));
      s_hom_[l] = sigma2_k_ * th;
      s_floor_[l] = 1e-20 * y_scale * th;
    }
    point_ = x0_.transpose() * beta_h_;
    center_ = x0_.transpose() * beta_g_;
  }

  // Bootstrap world under H0: responses Y_i - <P beta_g, X_i>, centering 0. `removed`
  // holds the coordinates of the projection P beta_g that is taken out.
  ProjectionProblem null_enforced(const Vector& removed) const {
    if (removed.size() != rank()) throw DimensionError("projection coordinates have the wrong length");
    ProjectionProblem out = *this;
    out.y_ = y_ - space_->scores() * removed;
    out.beta_g_ = beta_g_ - removed;
    out.center_.setZero();
    return out;
  }

  const ScoreSpace& space() const noexcept { return *space_; }
  const std::shared_ptr<const ScoreSpace>& space_ptr() const noexcept { return space_; }
  Index n() const noexcept { return space_->n(); }
  Index rank() const noexcept { return space_->rank(); }
  Index directions() const noexcept { return x0_.cols(); }
  const TuningChoice& tuning() const noexcept { return tuning_; }
  const Vector& responses() const noexcept { return y_; }
  const Matrix& x0() const noexcept { return x0_; }
  const Vector& beta_h() const noexcept { return beta_h_; }
  const Vector& beta_g() const noexcept { return beta_g_; }
  const Vector& beta_k() const noexcept { return beta_k_; }
  const Vector& residuals_g() const noexcept { return resid_g_; }
  const Vector& residuals_k() const noexcept { return resid_k_; }
  const Vector& u_hat() const noexcept { return u_hat_; }
  const Matrix& lambda() const noexcept { return lambda_; }
  double sigma2_k() const noexcept { return sigma2_k_; }
  const Vector& s_hat() const noexcept { return s_hat_; }
  const Vector& s_hom() const noexcept { return s_hom_; }
  // Scales at or below this are rounding noise of an exact fit.
  const Vector& scale_floor() const noexcept { return s_floor_; }
  const Vector& point() const noexcept { return point_; }
  const Vector& center() const noexcept { return center_; }

  // sqrt(s / n) for the variant's scaling: homoscedastic for the residual bootstrap.
  double standard_error(Index l, Variant v) const {
    const double s = v == Variant::residual ? s_hom_[l] : s_hat_[l];
    return std::sqrt(s / static_cast<double>(n()));
  }

  // sqrt(n / s_h(x0)) (<beta_h, x0> - target); 0 for an exact fit.
  double studentized(Index l, double target = 0.0) const {
    if (s_hat_[l] <= s_floor_[l]) return 0.0;
    return std::sqrt(static_cast<double>(n()) / s_hat_[l]) * (point_[l] - target);
  }

 private:
  std::shared_ptr<const ScoreSpace> space_;
  TuningChoice tuning_;
  Vector y_;
  Matrix x0_;
  Vector beta_h_, beta_g_, beta_k_;
  Vector resid_g_, resid_k_;
  Vector u_hat_;
  Matrix lambda_;
  double sigma2_k_ = 0.0;
  Vector s_hat_, s_hom_, s_floor_;
  Vector point_, center_;
};

inline std::vector<Index> resample_pairs(Index n, Engine& eng) {
  if (n < 1) throw DomainError("cannot resample an empty sample");
  std::uniform_int_distribution<Index> pick(0, n - 1);
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (auto& i : idx) i = pick(eng);
  return idx;
}

namespace detail {

// A scale at the floor means the resample is fitted exactly; its statistic is taken as 0.
inline ReplicateStat studentize(double proj, double center, double scale, double floor, Index n) {
  ReplicateStat s;
  s.projection_star = proj;
  s.scale_used = scale;
  if (!std::isfinite(scale) || scale < 0.0) {
    s.degenerate = true;
    return s;
  }
  if (scale <= floor) {
    s.t_star = 0.0;
    return s;
  }
  s.t_star = std::sqrt(static_cast<double>(n) / scale) * (proj - center);
  if (!std::isfinite(s.t_star)) s.degenerate = true;
  return s;
}

inline std::vector<ReplicateStat> all_degenerate(Index L) {
  std::vector<ReplicateStat> out(static_cast<std::size_t>(L));
  for (auto& s : out) s.degenerate = true;
  return out;
}

}  // namespace detail

// Paired replicate for every direction of the problem from one resample. With
// `corrected` the bootstrap estimating equation subtracts U_{n,g}.
inline std::vector<ReplicateStat> paired_replicate(const ProjectionProblem& P, std::span<const Index> idx,
                                                   bool corrected, Scaling scaling) {
  const Index n = static_cast<Index>(idx.size());
  const Index L = P.directions();
  const TuningChoice& t = P.tuning();
  const Matrix Zs = P.space().scores()(std::vector<Index>(idx.begin(), idx.end()), Eigen::all);
  Vector ys(n);
  for (Index i = 0; i < n; ++i) ys[i] = P.responses()[idx[static_cast<std::size_t>(i)]];

  const Eigen::RowVectorXd zbar = Zs.colwise().mean();
  const Matrix Zc = Zs.rowwise() - zbar;
  const double nd = static_cast<double>(n);
  Matrix G = Matrix::Zero(Zc.cols(), Zc.cols());
  G.selfadjointView<Eigen::Lower>().rankUpdate(Zc.transpose(), 1.0 / nd);
  G = G.selfadjointView<Eigen::Lower>();
  const Vector yc = ys.array() - ys.mean();
  Vector rhs = Zc.transpose() * yc / nd;
  if (corrected) rhs -= P.u_hat();

  const Spectrum spec = spectrum_of(G, P.space().m(), n);
  const bool need_k = scaling == Scaling::bootstrap_scale;
  if (t.h > spec.rank || (need_k && t.k > spec.rank)) return detail::all_degenerate(L);

  const Vector beta_h = spec.inverse_apply(t.h, rhs);
  std::vector<ReplicateStat> out(static_cast<std::size_t>(L));
  if (!need_k) {
    for (Index l = 0; l < L; ++l)
      out[static_cast<std::size_t>(l)] =
          detail::studentize(P.x0().col(l).dot(beta_h), P.center()[l], P.s_hat()[l], P.scale_floor()[l], n);
    return out;
  }

  // Lambda* is Lambda_{n,k} recomputed on the resampled pairs.
  const Vector beta_k = spec.inverse_apply(t.k, rhs);
  const Vector e = yc - Zc * beta_k;
  Matrix A = Zc.array().colwise() * e.array();
  A.rowwise() -= A.colwise().mean();
  for (Index l = 0; l < L; ++l) {
    const Vector a = spec.inverse_apply(t.h, P.x0().col(l));
    const Vector Aa = A * a;
    const double s_star = Aa.squaredNorm() / nd;
    out[static_cast<std::size_t>(l)] = detail::studentize(P.x0().col(l).dot(beta_h), P.center()[l], s_star, P.scale_floor()[l], n);
  }
  return out;
}

// Fixed-design residual bootstrap: Y*_i = <beta_g, X_i> + e*_i with e* drawn (by idx)
// from the centered g-residuals. Studentized with the homoscedastic scale sigma^2 t_h(x0).
inline std::vector<ReplicateStat> residual_bootstrap_replicate(const ProjectionProblem& P, std::span<const Index> idx,
                                                               Scaling scaling) {
  const Index n = P.n();
  if (static_cast<Index>(idx.size()) != n) throw DimensionError("residual resample must have n indices");
  const Index L = P.directions();
  const TuningChoice& t = P.tuning();
  const Matrix& Z = P.space().scores();
  const Vector& gam = P.space().eigenvalues();
  const Vector& rg = P.residuals_g();
  const double rbar = rg.mean();
  Vector ystar = Z * P.beta_g();
  for (Index i = 0; i < n; ++i) ystar[i] += rg[idx[static_cast<std::size_t>(i)]] - rbar;
  const double nd = static_cast<double>(n);
  const Vector d = Z.transpose() * (ystar.array() - ystar.mean()).matrix() / nd;

  Vector beta_h = Vector::Zero(P.rank());
  beta_h.head(t.h) = d.head(t.h).cwiseQuotient(gam.head(t.h));
  double sigma2 = P.sigma2_k();
  if (scaling == Scaling::bootstrap_scale) {
    Vector beta_k = Vector::Zero(P.rank());
    beta_k.head(t.k) = d.head(t.k).cwiseQuotient(gam.head(t.k));
    const Vector e = ystar - Z * beta_k;
    sigma2 = (e.array() - e.mean()).square().mean();
  }
  std::vector<ReplicateStat> out(static_cast<std::size_t>(L));
  for (Index l = 0; l < L; ++l) {
    const double th = P.x0().col(l).head(t.h).cwiseAbs2().cwiseQuotient(gam.head(t.h)).sum();
    out[static_cast<std::size_t>(l)] = detail::studentize(P.x0().col(l).dot(beta_h), P.center()[l], sigma2 * th, P.scale_floor()[l], n);
  }
  return out;
}

inline ReplicateStat pb_replicate(const ProjectionProblem& P, std::span<const Index> idx, Scaling scaling) {
  return paired_replicate(P, idx, true, scaling).front();
}
inline ReplicateStat pb_replicate(const ProjectionProblem& P, Engine& eng, Scaling scaling) {
  const auto idx = resample_pairs(P.n(), eng);
  return pb_replicate(P, idx, scaling);
}
inline ReplicateStat naive_replicate(const ProjectionProblem& P, std::span<const Index> idx, Scaling scaling) {
  return paired_replicate(P, idx, false, scaling).front();
}
inline ReplicateStat naive_replicate(const ProjectionProblem& P, Engine& eng, Scaling scaling) {
  const auto idx = resample_pairs(P.n(), eng);
  return naive_replicate(P, idx, scaling);
}
inline ReplicateStat residual_replicate(const ProjectionProblem& P, std::span<const Index> idx, Scaling scaling) {
  return residual_bootstrap_replicate(P, idx, scaling).front();
}
inline ReplicateStat residual_replicate(const ProjectionProblem& P, Engine& eng, Scaling scaling) {
  const auto idx = resample_pairs(P.n(), eng);
  return residual_replicate(P, idx, scaling);
}

inline std::vector<ReplicateStat> replicate(const ProjectionProblem& P, std::span<const Index> idx, Variant v,
                                            Scaling scaling) {
  switch (v) {
    case Variant::pb_modified: return paired_replicate(P, idx, true, scaling);
    case Variant::pb_naive: return paired_replicate(P, idx, false, scaling);
    case Variant::residual: return residual_bootstrap_replicate(P, idx, scaling);
  }
  throw ValidationError("unknown bootstrap variant");
}

// B x L replicate statistics; replicate b always uses stream(seed, {b}).
struct ReplicateTable {
  Index B = 0;
  Index L = 0;
  std::vector<ReplicateStat> stats;  // row-major, replicate-major

  const ReplicateStat& at(Index b, Index l) const { return stats[static_cast<std::size_t>(b * L + l)]; }
};

inline ReplicateTable run_replicates(const ProjectionProblem& P, Variant v, Scaling scaling, int B,
                                     std::uint64_t seed, unsigned workers) {
  ReplicateTable table{B, P.directions(), std::vector<ReplicateStat>(static_cast<std::size_t>(B) *
                                                                     static_cast<std::size_t>(P.directions()))};
  parallel_for(static_cast<std::size_t>(B), workers, [&](std::size_t b) {
    Engine eng = stream(seed, {static_cast<std::uint64_t>(b)});
    const auto idx = resample_pairs(P.n(), eng);
    const auto stats = replicate(P, idx, v, scaling);
    std::copy(stats.begin(), stats.end(), table.stats.begin() + static_cast<std::ptrdiff_t>(b * stats.size()));
  });
  return table;
}

// Order statistic number ceil((B + 1) p), clamped to [1, B], of sorted values.
inline double order_statistic(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw NumericalError("no replicate statistics available");
  const double pos = std::ceil(static_cast<double>(sorted.size() + 1) * p - 1e-9);
  const auto k = static_cast<std::size_t>(std::clamp(pos, 1.0, static_cast<double>(sorted.size())));
  return sorted[k - 1];
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Symmetrized: point -/+ q se with q the level order statistic of |T*|.
// Percentile: [point - q_{1-a/2} se, point - q_{a/2} se] from the T* order statistics.
inline Interval interval_from_replicates(double point, double se, std::vector<double> t_stars, IntervalKind kind,
                                         double level) {
  if (t_stars.empty()) throw NumericalError("all bootstrap replicates are degenerate");
  if (kind == IntervalKind::symmetrized) {
    for (auto& t : t_stars) t = std::abs(t);
    std::sort(t_stars.begin(), t_stars.end());
    const double q = order_statistic(t_stars, level);
    return {point - q * se, point + q * se};
  }
  std::sort(t_stars.begin(), t_stars.end());
  const double alpha = 1.0 - level;
  const double q_hi = order_statistic(t_stars, 1.0 - alpha / 2.0);
  const double q_lo = order_statistic(t_stars, alpha / 2.0);
  return {point - q_hi * se, point - q_lo * se};
}

struct BootstrapReport {
  double point = 0.0;  // <beta_h, x0> (centered projection unless config says otherwise)
  double se = 0.0;
  std::vector<ReplicateStat> replicates;
  Interval interval;
  Index degenerate_count = 0;
  Index B_eff = 0;
  double y_bar = 0.0;
  BootstrapConfig config;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::string> tuning_warnings(const TuningChoice& t) {
  std::vector<std::string> w;
  if (t.h < t.g) {
    w.push_back("h = " + std::to_string(t.h) + " < g = " + std::to_string(t.g) +
                ": the bootstrap centering uses more components than the estimator; both paired bootstraps are "
                "inconsistent in this regime");
  }
  return w;
}

inline BootstrapReport report_for(const ProjectionProblem& P, const ReplicateTable& table, Index l,
                                  const BootstrapConfig& config) {
  BootstrapReport rep;
  rep.config = config;
  rep.point = P.point()[l];
  rep.se = P.standard_error(l, config.variant);
  rep.y_bar = P.space().y_bar();
  rep.warnings = tuning_warnings(P.tuning());
  std::vector<double> t;
  rep.replicates.reserve(static_cast<std::size_t>(table.B));
  for (Index b = 0; b < table.B; ++b) {
    const ReplicateStat& s = table.at(b, l);
    rep.replicates.push_back(s);
    if (s.degenerate)
      ++rep.degenerate_count;
    else
      t.push_back(s.t_star);
  }
  rep.B_eff = static_cast<Index>(t.size());
  if (rep.degenerate_count > 0.05 * static_cast<double>(table.B)) {
    rep.warnings.push_back(std::to_string(rep.degenerate_count) + " of " + std::to_string(table.B) +
                           " bootstrap replicates were degenerate and dropped");
  }
  if (rep.se * rep.se * static_cast<double>(P.n()) <= P.scale_floor()[l]) {
    rep.warnings.push_back("estimated scale is zero; interval collapses to the point estimate");
    rep.interval = {rep.point, rep.point};
    return rep;
  }
  rep.interval = interval_from_replicates(rep.point, rep.se, std::move(t), config.interval, config.level);
  return rep;
}

}  // namespace detail

// One report per direction; all directions share the same resamples.
inline std::vector<BootstrapReport> confidence_intervals(const FunctionalDataset& ds, const std::vector<Curve>& x0s,
                                                         const BootstrapConfig& config) {
  config.validate();
  auto space = std::make_shared<const ScoreSpace>(ds);
  const ProjectionProblem P(space, x0s, config.tuning, config.center_x0);
  for (const auto& w : detail::tuning_warnings(config.tuning)) warn(w);
  const ReplicateTable table = run_replicates(P, config.variant, config.studentize, config.B, config.seed,
                                              config.workers);
  std::vector<BootstrapReport> out;
  for (Index l = 0; l < P.directions(); ++l) out.push_back(detail::report_for(P, table, l, config));
  return out;
}

inline BootstrapReport confidence_interval(const FunctionalDataset& ds, const Curve& x0,
                                           const BootstrapConfig& config) {
  return confidence_intervals(ds, {x0}, config).front();
}

inline BootstrapReport confidence_interval(const ProjectionProblem& P, const BootstrapConfig& config, Index l = 0) {
  config.validate();
  const ReplicateTable table = run_replicates(P, config.variant, config.studentize, config.B, config.seed,
                                              config.workers);
  return detail::report_for(P, table, l, config);
}

inline double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }

// point -/+ z_{1-a/2} sqrt(s_h(x0) / n).
inline Interval clt_interval(const ProjectionProblem& P, Index l, double level) {
  const double z = normal_quantile(0.5 + level / 2.0);
  const double se = P.standard_error(l, Variant::pb_modified);
  return {P.point()[l] - z * se, P.point()[l] + z * se};
}

// B_n = sqrt(n / s_h(x0)) <Gamma_h^-1 U_{n,g}, x0>: the data-only shift of the naive
// paired bootstrap relative to the debiased one.
inline double construction_bias(const ProjectionProblem& P, Index l = 0) {
  const TuningChoice& t = P.tuning();
  if (t.h < t.g) throw DomainError("construction bias needs h >= g");
  const double s = P.s_hat()[l];
  const double shift = P.x0().col(l).dot(P.space().truncated_inverse(t.h, P.u_hat()));
  if (shift == 0.0) return 0.0;
  if (!(s > 0.0)) throw NumericalError("estimated scale is zero");
  return std::sqrt(static_cast<double>(P.n()) / s) * shift;
}

inline double construction_bias(const FunctionalDataset& ds, const Curve& x0, const TuningChoice& tuning,
                                 bool center_x0 = true) {
  const ProjectionProblem P(std::make_shared<const ScoreSpace>(ds), {x0}, tuning, center_x0);
  return construction_bias(P, 0);
}

// sigma(tau) = sqrt((1 - 1/tau) (sum gamma_j beta_j^2 / sum gamma_j rho_j^2 + 1)), the
// limiting standard deviation of the construction bias when h / g -> tau.
inline double sigma_tau(double tau, std::span<const double> gamma, std::span<const double> rho_sq,
                        std::span<const double> beta) {
  if (!(tau >= 1.0)) throw DomainError("sigma(tau) needs tau >= 1");
  if (gamma.size() != rho_sq.size() || gamma.size() != beta.size())
    throw DimensionError("gamma, rho^2 and beta must have equal length");
  double signal = 0.0, noise = 0.0;
  for (std::size_t j = 0; j < gamma.size(); ++j) {
    signal += gamma[j] * beta[j] * beta[j];
    noise += gamma[j] * rho_sq[j];
  }
  if (!(noise > 0.0)) throw DomainError("sigma(tau) needs sum gamma_j rho_j^2 > 0");
  return std::sqrt((1.0 - 1.0 / tau) * (signal / noise + 1.0));
}

}  // namespace flrboot
