#pragma once

// Shared fixtures and brute-force oracles for the test suite. The oracles work on
// the full grid with plain matrix algebra and never touch the score-space shortcuts.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "flrboot.hpp"

namespace support {

using namespace flrboot;

inline Matrix random_matrix(Index r, Index c, std::uint64_t seed, double sd = 1.0) {
  Engine eng = stream(seed, {0x7e57ULL});
  std::normal_distribution<double> N(0.0, sd);
  Matrix M(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) M(i, j) = N(eng);
  return M;
}

inline Vector random_vector(Index n, std::uint64_t seed, double sd = 1.0) {
  return random_matrix(n, 1, seed, sd).col(0);
}

inline Curve random_curve(const GridPtr& g, std::uint64_t seed) { return Curve(g, random_vector(g->size(), seed)); }

// n random smooth-ish curves plus noisy responses.
inline FunctionalDataset random_dataset(Index n, Index m, std::uint64_t seed, double noise = 1.0) {
  GridPtr grid = Grid::uniform(m);
  const Index J = std::min<Index>(m - 1, 9);
  const Matrix B = fourier_basis_matrix(J, *grid);
  Matrix S = random_matrix(n, J, seed);
  for (Index j = 0; j < J; ++j) S.col(j) *= 1.0 / (1.0 + j);
  Matrix X = S * B.transpose() + 0.05 * random_matrix(n, m, seed + 1);
  const Vector beta = random_vector(m, seed + 2);
  Vector y = X * grid->weights().cwiseProduct(beta) + noise * random_vector(n, seed + 3);
  return FunctionalDataset(grid, std::move(X), std::move(y));
}

// Dense Gamma_n kernel, Delta_n values.
inline Matrix dense_cov(const FunctionalDataset& ds) {
  const Matrix Xc = ds.centered_X();
  return Xc.transpose() * Xc / static_cast<double>(ds.n());
}

inline FunctionalDataset resampled(const FunctionalDataset& ds, const std::vector<Index>& idx) {
  Matrix X(static_cast<Index>(idx.size()), ds.m());
  Vector y(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    X.row(static_cast<Index>(i)) = ds.X().row(idx[i]);
    y[static_cast<Index>(i)] = ds.y()[idx[i]];
  }
  return FunctionalDataset(ds.grid(), std::move(X), std::move(y));
}

// Paired bootstrap replicate on the full grid: eigendecompose Gamma*_n, solve with
// Delta*_n - U (U omitted for the naive version), rebuild Lambda* from the resample.
inline ReplicateStat dense_paired_replicate(const FunctionalDataset& ds, const Curve& x0c, const TuningChoice& t,
                                            const std::vector<Index>& idx, bool corrected, Scaling scaling) {
  const FpcrFit fit_g = fpcr_fit(ds, t.g);
  const FpcrFit fit_h = fpcr_fit(ds, t.h);
  const FpcrFit fit_k = fpcr_fit(ds, t.k);
  const Curve U = u_hat(ds, fit_g.residuals);
  const FunctionalDataset bs = resampled(ds, idx);
  const EigenSystem eig = eigendecompose(sample_covariance(bs), bs.m(), bs.n());
  Curve rhs = cross_covariance(bs);
  if (corrected) rhs -= U;
  const Curve bh = truncated_inverse_apply(eig, t.h, rhs);
  const double proj = inner_product(bh, x0c);
  const double center = inner_product(fit_g.beta_hat, x0c);
  double scale;
  if (scaling == Scaling::data_scale) {
    scale = scaling_s_hat(fit_h.eig, lambda_hat(ds, fit_k.residuals), t.h, x0c);
  } else {
    const Curve bk = truncated_inverse_apply(eig, t.k, rhs);
    const Matrix Xc = bs.centered_X();
    const Vector e = bs.centered_y() - Xc * ds.grid()->weights().cwiseProduct(bk.values());
    scale = scaling_s_hat(eig, lambda_hat(bs, e), t.h, x0c);
  }
  ReplicateStat s;
  s.projection_star = proj;
  s.scale_used = scale;
  s.t_star = std::sqrt(static_cast<double>(ds.n()) / scale) * (proj - center);
  return s;
}

}  // namespace support
