#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace flrboot;
using support::random_curve;
using support::random_dataset;

namespace {

double max_abs(const Curve& c) { return c.values().cwiseAbs().maxCoeff(); }

}  // namespace

TEST(TargetSet, GramAndRank) {
  auto g = Grid::uniform(50);
  const Curve a = random_curve(g, 1), b = random_curve(g, 2);
  const TargetSet t({a, b, a + b});
  EXPECT_EQ(t.size(), 3);
  EXPECT_EQ(t.rank(), 2);
  EXPECT_NEAR(t.gram()(0, 1), inner_product(a, b), 1e-12);
  EXPECT_LT((t.gram() - t.gram().transpose()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(TargetSet({}), ValidationError);
  EXPECT_EQ(TargetSet({Curve::zero(g)}).rank(), 0);
}

TEST(ProjectOntoSpan, InSpanAndOrthogonal) {
  auto g = Grid::uniform(60);
  const auto basis = fourier_basis(5, g);
  const TargetSet t({basis[0], basis[1] + basis[2]});
  const Curve f = 2.0 * basis[0] - 0.5 * (basis[1] + basis[2]);
  EXPECT_LT(max_abs(project_onto_span(t, f) - f), 1e-10);
  EXPECT_LT(max_abs(project_onto_span(t, basis[3])), 1e-10);
  EXPECT_LT(max_abs(project_onto_span(t, basis[1] - basis[2])), 1e-10);
}

TEST(ProjectOntoSpan, DuplicatedCurve) {
  auto g = Grid::uniform(40);
  const Curve x = random_curve(g, 3);
  const TargetSet t({x, x});
  ASSERT_EQ(t.rank(), 1);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Curve f = random_curve(g, 10 + s);
    const Curve want = (inner_product(f, x) / norm_squared(x)) * x;
    EXPECT_LT(max_abs(project_onto_span(t, f) - want), 1e-10);
  }
}

TEST(ProjectOntoSpan, IdempotentAndOrthogonalResidual) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto g = Grid::uniform(30);
    std::vector<Curve> cs;
    for (std::uint64_t l = 0; l < 1 + s % 4; ++l) cs.push_back(random_curve(g, 100 * s + l));
    const TargetSet t(cs);
    const Curve f = random_curve(g, 7000 + s);
    const Curve p = project_onto_span(t, f);
    EXPECT_LT(max_abs(project_onto_span(t, p) - p), 1e-8);
    for (const auto& c : cs) EXPECT_NEAR(inner_product(f - p, c), 0.0, 1e-8);
  }
}

TEST(ObservedStatistics, OrthogonalTargetGivesZero) {
  const FunctionalDataset ds = random_dataset(40, 30, 4);
  const TuningChoice tu{2, 3, 2};
  const Curve bh = fpcr_fit(ds, 3).beta_hat;
  Curve x = random_curve(ds.grid(), 5);
  x -= (inner_product(x, bh) / norm_squared(bh)) * bh;
  const ObservedStatistics o = observed_statistics(ds, TargetSet({x}), tu, false);
  EXPECT_NEAR(o.w_l2, 0.0, 1e-18);
  EXPECT_NEAR(o.w_max, 0.0, 1e-9);
}

TEST(ObservedStatistics, CompositionOfScalarStatistics) {
  const FunctionalDataset ds = random_dataset(40, 30, 6);
  const TuningChoice tu{2, 3, 2};
  const Curve a = random_curve(ds.grid(), 7), b = random_curve(ds.grid(), 8);
  const ObservedStatistics o = observed_statistics(ds, TargetSet({a, b}), tu);
  // scalar route on the full grid: sqrt(n / s_h) <beta_h, x - X_bar>
  const FpcrFit fh = fpcr_fit(ds, 3), fk = fpcr_fit(ds, 2);
  const LinearOperator L = lambda_hat(ds, fk.residuals);
  double t[2];
  int l = 0;
  for (const Curve& x : {a, b}) {
    const Curve xc = x - ds.x_bar();
    t[l++] = std::sqrt(40.0 / scaling_s_hat(fh.eig, L, 3, xc)) * inner_product(fh.beta_hat, xc);
  }
  EXPECT_NEAR(o.per_direction[0], t[0], 1e-9);
  EXPECT_NEAR(o.per_direction[1], t[1], 1e-9);
  EXPECT_NEAR(o.w_l2, t[0] * t[0] + t[1] * t[1], 1e-8);
  EXPECT_NEAR(o.w_max, std::max(std::abs(t[0]), std::abs(t[1])), 1e-9);
  const ObservedStatistics r = observed_statistics(ds, TargetSet({b, a}), tu);
  EXPECT_NEAR(r.w_l2, o.w_l2, 1e-12);
  EXPECT_NEAR(r.w_max, o.w_max, 1e-12);
}

TEST(NullEnforced, OrthogonalSlopeUnchanged) {
  const FunctionalDataset ds = random_dataset(30, 20, 9);
  const Curve bg = fpcr_fit(ds, 3).beta_hat;
  Curve x = random_curve(ds.grid(), 10);
  x -= (inner_product(x, bg) / norm_squared(bg)) * bg;
  const NullEnforced ne = null_enforced_dataset(ds, TargetSet({x}), 3);
  EXPECT_LT((ne.dataset.y() - ds.y()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(max_abs(ne.beta_tilde_g - bg), 1e-10);
}

TEST(NullEnforced, FullProjection) {
  const FunctionalDataset ds = random_dataset(30, 20, 11);
  const FpcrFit fit = fpcr_fit(ds, 3);
  std::vector<Curve> cs;
  for (Index j = 0; j < 3; ++j) cs.push_back(fit.eig.eigenfunction(j));
  const NullEnforced ne = null_enforced_dataset(ds, TargetSet(cs), 3);
  EXPECT_LT(max_abs(ne.beta_tilde_g), 1e-10);
  for (Index i = 0; i < 30; ++i)
    EXPECT_NEAR(ne.dataset.y()[i], ds.y()[i] - inner_product(fit.beta_hat, ds.curve(i)), 1e-10);
}

TEST(NullEnforced, IdempotentAndRefitOrthogonal) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const FunctionalDataset ds = random_dataset(40, 25, 20 + s);
    const Index g = 4;
    const FpcrFit fit = fpcr_fit(ds, g);
    // targets inside the span of the leading g eigenfunctions
    const Vector c1 = support::random_vector(g, 40 + s), c2 = support::random_vector(g, 60 + s);
    const Matrix P = fit.eig.functions.leftCols(g);
    const TargetSet t({Curve(ds.grid(), P * c1), Curve(ds.grid(), P * c2)});
    const NullEnforced once = null_enforced_dataset(ds, t, g);
    const NullEnforced twice = null_enforced_dataset(once.dataset, t, g);
    EXPECT_LT((twice.dataset.y() - once.dataset.y()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT(max_abs(project_onto_span(t, once.beta_tilde_g)), 1e-8);
    const Curve refit = fpcr_fit(once.dataset, g).beta_hat;
    EXPECT_LE(norm(project_onto_span(t, refit)), 1e-6 * norm(fit.beta_hat));
  }
}

TEST(PValue, Arithmetic) {
  EXPECT_EQ(bootstrap_p_value(1.0, {2.0}), 1.0);
  EXPECT_EQ(bootstrap_p_value(1.0, {1.0}), 1.0);
  EXPECT_EQ(bootstrap_p_value(3.0, {2.0}), 0.5);
  EXPECT_NEAR(bootstrap_p_value(3.0, {1.0, 2.0, 3.0, 4.0}), 3.0 / 5.0, 1e-15);
}

TEST(PValue, ReplicateRanksAreValid) {
  const FunctionalDataset ds = random_dataset(40, 25, 70);
  BootstrapConfig c;
  c.B = 200;
  c.tuning = {2, 3, 2};
  c.seed = 5;
  const TestResult r = bootstrap_test(ds, TargetSet({random_curve(ds.grid(), 71), random_curve(ds.grid(), 72)}), c, true);
  ASSERT_EQ(r.B_eff, 200);
  for (double alpha : {0.05, 0.1, 0.25, 0.5}) {
    int below = 0;
    for (double w : r.w_star) below += bootstrap_p_value(w, r.w_star) <= alpha;
    EXPECT_LE(below, alpha * (r.B_eff + 1));
  }
}

TEST(BootstrapTest, NoiselessNull) {
  const FunctionalDataset base = random_dataset(40, 30, 12);
  const EigenSystem e = fpcr_fit(base, 1).eig;
  const Curve phi1 = e.eigenfunction(0);
  Vector y(40);
  for (Index i = 0; i < 40; ++i) y[i] = inner_product(phi1, base.curve(i));
  const FunctionalDataset ds = base.with_responses(y);
  BootstrapConfig c;
  c.B = 100;
  c.tuning = {2, 3, 2};
  c.seed = 13;
  for (bool enforce : {true, false}) {
    const auto res = bootstrap_tests(ds, TargetSet({e.eigenfunction(1), e.eigenfunction(2)}), c, enforce, false);
    for (const auto& r : res) {
      EXPECT_NEAR(r.w_observed, 0.0, 1e-6);
      EXPECT_GE(r.p_value, 0.5);
    }
  }
}

TEST(BootstrapTest, EnforcedMatchesRefitOnModifiedResponses) {
  const FunctionalDataset ds = random_dataset(40, 25, 14);
  const Index g = 3;
  const FpcrFit fit = fpcr_fit(ds, g);
  const Matrix P = fit.eig.functions.leftCols(g);
  const TargetSet t({Curve(ds.grid(), P * support::random_vector(g, 15)), Curve(ds.grid(), P * support::random_vector(g, 16))});
  BootstrapConfig c;
  c.B = 40;
  c.tuning = {g, 4, g};
  c.seed = 17;
  const TestResult r = bootstrap_test(ds, t, c, true, StatisticKind::l2, false);
  const NullEnforced ne = null_enforced_dataset(ds, t, g);
  const ProjectionProblem Q(std::make_shared<const ScoreSpace>(ne.dataset), t.curves(), c.tuning, false);
  EXPECT_LT(Q.center().cwiseAbs().maxCoeff(), 1e-10);
  const ReplicateTable tab = run_replicates(Q, Variant::pb_modified, Scaling::bootstrap_scale, c.B, c.seed, 1);
  ASSERT_EQ(r.B_eff, 40);
  for (Index b = 0; b < 40; ++b) {
    const double w = std::pow(tab.at(b, 0).t_star, 2) + std::pow(tab.at(b, 1).t_star, 2);
    EXPECT_NEAR(r.w_star[static_cast<std::size_t>(b)], w, 1e-7 * (1 + w));
  }
}

TEST(BootstrapTest, PlainCentersAtBetaG) {
  const FunctionalDataset ds = random_dataset(40, 25, 18);
  const TargetSet t({random_curve(ds.grid(), 19)});
  BootstrapConfig c;
  c.B = 30;
  c.tuning = {2, 3, 2};
  c.seed = 20;
  const TestResult r = bootstrap_test(ds, t, c, false, StatisticKind::max, false);
  const ProjectionProblem Q(std::make_shared<const ScoreSpace>(ds), t.curves(), c.tuning, false);
  const ReplicateTable tab = run_replicates(Q, Variant::pb_modified, Scaling::bootstrap_scale, c.B, c.seed, 1);
  for (Index b = 0; b < 30; ++b) EXPECT_NEAR(r.w_star[static_cast<std::size_t>(b)], std::abs(tab.at(b, 0).t_star), 1e-12);
}

TEST(BootstrapTest, DeterministicAndValidated) {
  const FunctionalDataset ds = random_dataset(40, 25, 21);
  const TargetSet t({random_curve(ds.grid(), 22), random_curve(ds.grid(), 23)});
  BootstrapConfig c;
  c.B = 50;
  c.tuning = {2, 3, 2};
  c.seed = 24;
  const TestResult a = bootstrap_test(ds, t, c, true);
  c.workers = 3;
  const TestResult b = bootstrap_test(ds, t, c, true);
  EXPECT_EQ(a.p_value, b.p_value);
  EXPECT_EQ(a.w_star, b.w_star);
  EXPECT_GE(a.p_value, 1.0 / 51.0);
  EXPECT_LE(a.p_value, 1.0);
  c.variant = Variant::residual;
  EXPECT_THROW(bootstrap_test(ds, t, c, true), ValidationError);
}

TEST(BootstrapTest, RankDeficientTargetsWarn) {
  const FunctionalDataset ds = random_dataset(40, 25, 25);
  const Curve x = random_curve(ds.grid(), 26);
  BootstrapConfig c;
  c.B = 20;
  c.tuning = {2, 3, 2};
  std::vector<std::string> seen;
  auto old = set_warning_sink([&](const std::string& w) { seen.push_back(w); });
  const TestResult r = bootstrap_test(ds, TargetSet({x, x}), c, true, StatisticKind::max, false);
  set_warning_sink(old);
  bool found = false;
  for (const auto& w : r.warnings) found = found || w.find("span only 1") != std::string::npos;
  EXPECT_TRUE(found);
}
