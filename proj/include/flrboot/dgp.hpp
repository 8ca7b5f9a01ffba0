#pragma once

// Simulation designs: truncated Karhunen-Loeve regressors on a Fourier basis with
// polynomially decaying eigengaps, a Rademacher-signed slope, and centered chi-square
// errors whose degrees of freedom may depend on the regressor.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "flrboot/errors.hpp"
#include "flrboot/flrm.hpp"
#include "flrboot/hilbert.hpp"
#include "flrboot/rng.hpp"

namespace flrboot {

enum class ErrorMode { homoscedastic_chisq, heteroscedastic_chisq, none };
enum class SlopeMode { simulation, h0, h1 };
// gaps: gamma_j - gamma_{j+1} = 2 j^-a. literal: gaps j^-a, so gamma_1 = zeta(a).
enum class SpectrumKind { gaps, literal };

inline constexpr double infinite_dof = std::numeric_limits<double>::infinity();

struct DgpSpec {
  Index n = 200;
  Index J = 15;
  double a = 2.5;
  double b = 5.5;
  double slope_scale = 3.0;
  double nu = 5.0;  // infinite_dof: xi == 1
  ErrorMode error_mode = ErrorMode::heteroscedastic_chisq;
  Index grid_size = 100;
  bool standardize_xi = true;
  std::uint64_t slope_signs_seed = 1;
  SlopeMode slope_mode = SlopeMode::simulation;
  double hypothesis_p = 0.0;
  SpectrumKind spectrum = SpectrumKind::gaps;

  void validate() const {
    if (n < 2) throw ValidationError("dgp needs n >= 2");
    if (J < 1) throw ValidationError("dgp needs J >= 1");
    if (!(a > 1.0)) throw DomainError("eigengap exponent a must exceed 1");
    if (grid_size < 2) throw ValidationError("dgp needs at least 2 grid points");
    if (2 * (J / 2) >= grid_size) throw DomainError("grid too coarse for " + std::to_string(J) + " Fourier functions");
    if (!(nu > 0.0)) throw DomainError("degrees of freedom nu must be positive");
    if (standardize_xi && !(nu > 2.0)) throw DomainError("standardizing xi needs nu > 2");
    if (slope_mode != SlopeMode::simulation && J <= 6) throw DomainError("null/alternative slopes need J > 6");
    if (!(hypothesis_p >= 0.0 && hypothesis_p <= 1.0)) throw DomainError("proportion p must lie in [0, 1]");
  }
};

// Columns 1, sqrt2 sin(2 pi t), sqrt2 cos(2 pi t), sqrt2 sin(4 pi t), ...
inline Matrix fourier_basis_matrix(Index J, const Grid& grid) {
  if (J < 1) throw DomainError("basis needs J >= 1");
  const Vector& t = grid.points();
  Matrix B(grid.size(), J);
  for (Index j = 0; j < J; ++j) {
    const double freq = 2.0 * std::numbers::pi * static_cast<double>((j + 1) / 2);
    for (Index i = 0; i < grid.size(); ++i) {
      if (j == 0)
        B(i, j) = 1.0;
      else if (j % 2 == 1)
        B(i, j) = std::numbers::sqrt2 * std::sin(freq * t[i]);
      else
        B(i, j) = std::numbers::sqrt2 * std::cos(freq * t[i]);
    }
  }
  return B;
}

inline std::vector<Curve> fourier_basis(Index J, const GridPtr& grid) {
  const Matrix B = fourier_basis_matrix(J, *grid);
  std::vector<Curve> out;
  for (Index j = 0; j < J; ++j) out.emplace_back(grid, B.col(j));
  return out;
}

// sum_{l >= from} l^-a: explicit sum up to 10^6, integral remainder beyond.
inline double zeta_tail(double a, Index from) {
  constexpr Index L = 1000000;
  double s = 0.0;
  if (from <= L) {
    for (Index l = L; l >= from; --l) s += std::pow(static_cast<double>(l), -a);
    s += std::pow(static_cast<double>(L) + 0.5, 1.0 - a) / (a - 1.0);
  } else {
    s = std::pow(static_cast<double>(from) - 0.5, 1.0 - a) / (a - 1.0);
  }
  return s;
}

// gamma_j = c sum_{l >= j} l^-a, with c = 2 (gaps) or 1 (literal).
inline Vector spectrum_from_gaps(double a, Index J, SpectrumKind kind = SpectrumKind::gaps) {
  if (!(a > 1.0)) throw DomainError("eigengap exponent a must exceed 1");
  if (J < 1) throw DomainError("spectrum needs J >= 1");
  const double c = kind == SpectrumKind::gaps ? 2.0 : 1.0;
  Vector g(J);
  g[J - 1] = c * zeta_tail(a, J);
  for (Index j = J - 1; j >= 1; --j) g[j - 1] = g[j] + c * std::pow(static_cast<double>(j), -a);
  return g;
}

inline Vector slope_signs(std::uint64_t seed, Index J) {
  Engine eng = stream(seed, {});
  std::bernoulli_distribution coin(0.5);
  Vector w(J);
  for (Index j = 0; j < J; ++j) w[j] = coin(eng) ? 1.0 : -1.0;
  return w;
}

// Basis coefficients of the slope.
//   simulation: c j^-b W_j
//   h0:         c j^-b W_j for j >= 7, 0 below
//   h1:         (1 - p) beta_H0 + p sum_{j<=6} c j^-b W_j phi_j
inline Vector slope_coefficients(const DgpSpec& spec, SlopeMode mode) {
  const Vector w = slope_signs(spec.slope_signs_seed, spec.J);
  Vector beta(spec.J);
  for (Index j = 0; j < spec.J; ++j)
    beta[j] = spec.slope_scale * std::pow(static_cast<double>(j + 1), -spec.b) * w[j];
  if (mode == SlopeMode::simulation) return beta;
  if (spec.J <= 6) throw DomainError("null/alternative slopes need J > 6");
  const double p = mode == SlopeMode::h1 ? spec.hypothesis_p : 0.0;
  for (Index j = 0; j < spec.J; ++j) beta[j] *= j < 6 ? p : 1.0 - p;
  return beta;
}

struct Slope {
  Curve curve;
  Vector coefficients;
};

inline Slope gen_slope(const DgpSpec& spec, SlopeMode mode, const GridPtr& grid) {
  const Vector c = slope_coefficients(spec, mode);
  return Slope{Curve(grid, fourier_basis_matrix(spec.J, *grid) * c), c};
}

// Everything about a design that does not change between Monte Carlo repetitions.
struct Design {
  DgpSpec spec;
  GridPtr grid;
  Matrix basis;  // m x J
  Vector gamma;
  Vector beta_coefficients;
  Curve beta;
};

inline Design make_design(const DgpSpec& spec) {
  spec.validate();
  GridPtr grid = Grid::uniform(spec.grid_size);
  Matrix basis = fourier_basis_matrix(spec.J, *grid);
  Vector gamma = spectrum_from_gaps(spec.a, spec.J, spec.spectrum);
  Vector coef = slope_coefficients(spec, spec.slope_mode);
  Curve beta(grid, basis * coef);
  return Design{spec, grid, std::move(basis), std::move(gamma), std::move(coef), std::move(beta)};
}

// Rows of the returned matrix are the scores <X_i, phi_j> = sqrt(gamma_j) xi W_j.
inline Matrix gen_scores(const Design& d, Index count, Engine& eng) {
  const DgpSpec& s = d.spec;
  std::normal_distribution<double> normal;
  std::student_t_distribution<double> t(std::isfinite(s.nu) ? s.nu : 1.0);
  const double shrink = std::isfinite(s.nu) && s.standardize_xi ? std::sqrt((s.nu - 2.0) / s.nu) : 1.0;
  const Vector sd = d.gamma.cwiseSqrt();
  Matrix scores(count, s.J);
  for (Index i = 0; i < count; ++i) {
    const double xi = std::isfinite(s.nu) ? shrink * t(eng) : 1.0;
    for (Index j = 0; j < s.J; ++j) scores(i, j) = sd[j] * xi * normal(eng);
  }
  return scores;
}

inline Matrix gen_regressors(const Design& d, Index count, Engine& eng, Matrix* scores = nullptr) {
  Matrix sc = gen_scores(d, count, eng);
  Matrix X = sc * d.basis.transpose();
  if (scores) *scores = std::move(sc);
  return X;
}

// chi^2(nu) - nu drawn as Gamma(nu / 2, 2) - nu, so fractional nu is allowed.
inline double centered_chisq(double nu, Engine& eng) {
  if (!(nu > 0.0)) return 0.0;
  std::gamma_distribution<double> g(nu / 2.0, 2.0);
  return g(eng) - nu;
}

// Heteroscedastic: nu(X_i) = ||X_i||^2 / 2, so Var(eps | X) = ||X||^2.
// Homoscedastic: nu = trace / 2 with trace = sum_j gamma_j.
inline Vector gen_errors(const Matrix& X, const Grid& grid, ErrorMode mode, double trace, Engine& eng) {
  Vector e = Vector::Zero(X.rows());
  if (mode == ErrorMode::none) return e;
  for (Index i = 0; i < X.rows(); ++i) {
    const double nu = mode == ErrorMode::heteroscedastic_chisq
                          ? 0.5 * (X.row(i).transpose().array().square() * grid.weights().array()).sum()
                          : 0.5 * trace;
    e[i] = centered_chisq(nu, eng);
  }
  return e;
}

struct GeneratedSample {
  FunctionalDataset dataset;
  Curve x0;
  Curve beta_true;
  double true_projection = 0.0;  // <beta, X0>
  Matrix scores;                 // n x J
  Vector errors;
};

inline GeneratedSample gen_dataset(const Design& d, Engine& eng) {
  Matrix scores;
  Matrix X = gen_regressors(d, d.spec.n, eng, &scores);
  const Vector errors = gen_errors(X, *d.grid, d.spec.error_mode, d.gamma.sum(), eng);
  Matrix s0;
  const Matrix X0 = gen_regressors(d, 1, eng, &s0);
  const Vector y = scores * d.beta_coefficients + errors;
  Curve x0(d.grid, X0.row(0).transpose());
  const double truth = inner_product(d.beta, x0);
  return GeneratedSample{FunctionalDataset(d.grid, std::move(X), y), std::move(x0), d.beta, truth,
                         std::move(scores), errors};
}

inline GeneratedSample gen_dataset(const DgpSpec& spec, Engine& eng) { return gen_dataset(make_design(spec), eng); }

// k_n = 2 floor(n^{1 / (2a + 1.1)}), clamped to [1, J].
inline Index default_k(const DgpSpec& spec) {
  const double v = 2.0 * spec.a + 1.1;
  const Index k = 2 * static_cast<Index>(std::floor(std::pow(static_cast<double>(spec.n), 1.0 / v)));
  return std::clamp<Index>(k, 1, spec.J);
}

}  // namespace flrboot
