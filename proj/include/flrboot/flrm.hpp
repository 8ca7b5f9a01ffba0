#pragma once

// Functional principal component regression (FPCR) for the scalar-on-function model
// Y = <beta, X> + eps: centering, empirical covariance operators, spectral truncation,
// heteroscedasticity-robust scaling and the residual cross-covariance used to debias
// the paired bootstrap.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "flrboot/errors.hpp"
#include "flrboot/hilbert.hpp"
#include "flrboot/rng.hpp"

namespace flrboot {

// n curves (rows of X) on one grid, paired with n scalar responses.
class FunctionalDataset {
 public:
  FunctionalDataset(GridPtr grid, Matrix X, Vector y)
      : grid_(std::move(grid)), X_(std::move(X)), y_(std::move(y)) {
    if (!grid_) throw DimensionError("dataset without grid");
    if (X_.rows() < 2) throw DomainError("dataset needs at least 2 observations");
    if (X_.cols() != grid_->size()) throw DimensionError("curve length differs from grid size");
    if (y_.size() != X_.rows()) throw DimensionError("number of responses differs from number of curves");
    if (!X_.allFinite() || !y_.allFinite()) throw DomainError("dataset contains non-finite values");
    x_bar_ = X_.colwise().mean().transpose();
    y_bar_ = y_.mean();
  }

  static FunctionalDataset from_curves(const std::vector<Curve>& curves, Vector y) {
    if (curves.empty()) throw DomainError("dataset needs at least 2 observations");
    Matrix X(static_cast<Index>(curves.size()), curves.front().size());
    for (std::size_t i = 0; i < curves.size(); ++i) {
      require_same_grid(curves.front().grid(), curves[i].grid());
      X.row(static_cast<Index>(i)) = curves[i].values().transpose();
    }
    return FunctionalDataset(curves.front().grid(), std::move(X), std::move(y));
  }

  Index n() const noexcept { return X_.rows(); }
  Index m() const noexcept { return X_.cols(); }
  const GridPtr& grid() const noexcept { return grid_; }
  const Matrix& X() const noexcept { return X_; }
  const Vector& y() const noexcept { return y_; }
  Curve curve(Index i) const { return Curve(grid_, X_.row(i).transpose()); }
  bool centered() const noexcept { return centered_; }

  // Means of the original (uncentered) data.
  Curve x_bar() const { return Curve(grid_, x_bar_); }
  double y_bar() const noexcept { return y_bar_; }

  // Curves X_i - X_bar and responses Y_i - Y_bar, whatever the centering state.
  Matrix centered_X() const {
    if (centered_) return X_;
    return X_.rowwise() - x_bar_.transpose();
  }
  Vector centered_y() const {
    if (centered_) return y_;
    return y_.array() - y_bar_;
  }

  // Same curves, new responses (used by null enforcement).
  FunctionalDataset with_responses(Vector y) const {
    FunctionalDataset out = *this;
    if (y.size() != n()) throw DimensionError("number of responses differs from number of curves");
    out.y_ = std::move(y);
    if (!centered_) out.y_bar_ = out.y_.mean();
    return out;
  }

 private:
  friend FunctionalDataset center(const FunctionalDataset&);

  GridPtr grid_;
  Matrix X_;
  Vector y_;
  Vector x_bar_;
  double y_bar_ = 0.0;
  bool centered_ = false;
};

inline FunctionalDataset center(const FunctionalDataset& ds) {
  if (ds.centered_) {
    warn("dataset is already centered; centering skipped");
    return ds;
  }
  FunctionalDataset out = ds;
  out.X_ = ds.centered_X();
  out.y_ = ds.centered_y();
  out.centered_ = true;
  return out;
}

// Gamma_n = n^-1 sum (X_i - X_bar)^{⊗2}.
inline LinearOperator sample_covariance(const FunctionalDataset& ds) {
  const Matrix Xc = ds.centered_X();
  return LinearOperator::symmetric(ds.grid(), Xc.transpose() * Xc / static_cast<double>(ds.n()));
}

// Delta_n = n^-1 sum (Y_i - Y_bar)(X_i - X_bar).
inline Curve cross_covariance(const FunctionalDataset& ds) {
  return Curve(ds.grid(), ds.centered_X().transpose() * ds.centered_y() / static_cast<double>(ds.n()));
}

inline double rank_tolerance(Index m, Index n, double leading) {
  return static_cast<double>(std::max(m, n)) * std::numeric_limits<double>::epsilon() * std::max(leading, 0.0);
}

// Retained eigenpairs of a symmetric PSD operator; eigenfunctions are orthonormal in
// the weighted inner product.
struct EigenSystem {
  GridPtr grid;
  Vector values;     // descending, all > rank tolerance
  Matrix functions;  // m x rank, column j is phi_j on the grid

  Index rank() const noexcept { return values.size(); }
  Curve eigenfunction(Index j) const { return Curve(grid, functions.col(j)); }
};

// Flip each column so that its entry of largest magnitude is positive (first index wins ties).
inline void apply_sign_convention(Matrix& vecs) {
  for (Index j = 0; j < vecs.cols(); ++j) {
    Index arg = 0;
    double best = -1.0;
    for (Index i = 0; i < vecs.rows(); ++i) {
      const double a = std::abs(vecs(i, j));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (vecs(arg, j) < 0.0) vecs.col(j) *= -1.0;
  }
}

// sample_size only feeds the rank tolerance max(m, n) * eps * gamma_1.
inline EigenSystem eigendecompose(const LinearOperator& op, Index max_rank, Index sample_size = 0) {
  if (!op.is_symmetric(1e-10)) throw InvalidOperatorError("eigendecompose needs a symmetric operator");
  const Vector sw = op.grid()->weights().cwiseSqrt();
  const Matrix S = sw.asDiagonal() * op.kernel() * sw.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (S + S.transpose()));
  if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigensolver did not converge");
  const Index m = S.rows();
  const Vector evals = solver.eigenvalues().reverse();
  const Matrix evecs = solver.eigenvectors().rowwise().reverse();
  const double tol = rank_tolerance(m, sample_size, evals.size() ? evals[0] : 0.0);
  Index r = 0;
  while (r < m && r < max_rank && evals[r] > tol && evals[0] > 0.0) ++r;
  EigenSystem out{op.grid(), evals.head(r), sw.cwiseInverse().asDiagonal() * evecs.leftCols(r)};
  apply_sign_convention(out.functions);
  return out;
}

inline void require_truncation(Index h, Index rank, const char* what) {
  if (h < 1 || h > rank) {
    throw TruncationError(std::string(what) + " truncation level " + std::to_string(h) +
                              " is outside [1, " + std::to_string(rank) + "]; largest admissible level is " +
                              std::to_string(rank),
                          static_cast<std::size_t>(rank));
  }
}

// sum_{j<=h} gamma_j^-1 <x, phi_j> phi_j.
inline Curve truncated_inverse_apply(const EigenSystem& eig, Index h, const Curve& x) {
  require_same_grid(eig.grid, x.grid());
  require_truncation(h, eig.rank(), "inverse");
  const auto Phi = eig.functions.leftCols(h);
  const Vector c = Phi.transpose() * eig.grid->weights().cwiseProduct(x.values());
  return Curve(x.grid(), Phi * c.cwiseQuotient(eig.values.head(h)));
}

// Spectral decomposition of a small covariance matrix expressed in coordinates.
struct Spectrum {
  Vector values;   // descending, negatives clipped to 0
  Matrix vectors;  // columns are orthonormal eigenvectors
  Index rank = 0;  // number of values above tolerance

  Vector inverse_apply(Index h, const Vector& v) const {
    const auto V = vectors.leftCols(h);
    return V * (V.transpose() * v).cwiseQuotient(values.head(h));
  }
};

inline Spectrum spectrum_of(const Matrix& G, Index m, Index n) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(G);
  Spectrum s;
  s.values = solver.eigenvalues().reverse().cwiseMax(0.0);
  s.vectors = solver.eigenvectors().rowwise().reverse();
  const double tol = rank_tolerance(m, n, s.values.size() ? s.values[0] : 0.0);
  while (s.rank < s.values.size() && s.values[s.rank] > tol) ++s.rank;
  return s;
}

// Centered data expressed in the eigenbasis of its own sample covariance. All curves
// X_i - X_bar lie in the span of the retained eigenfunctions, so every estimator built
// from them (including bootstrap resamples) is computed exactly in these coordinates.
class ScoreSpace {
 public:
  explicit ScoreSpace(const FunctionalDataset& ds)
      : grid_(ds.grid()), n_(ds.n()), x_bar_(ds.x_bar().values()), y_bar_(ds.y_bar()) {
    const Matrix Xc = ds.centered_X();
    const LinearOperator cov =
        LinearOperator::symmetric(grid_, Xc.transpose() * Xc / static_cast<double>(n_));
    eig_ = eigendecompose(cov, std::min(n_ - 1, ds.m()), n_);
    scores_ = Xc * grid_->weights().asDiagonal() * eig_.functions;
    y_ = ds.centered_y();
  }

  Index n() const noexcept { return n_; }
  Index m() const noexcept { return grid_->size(); }
  Index rank() const noexcept { return eig_.rank(); }
  const GridPtr& grid() const noexcept { return grid_; }
  const EigenSystem& eig() const noexcept { return eig_; }
  const Vector& eigenvalues() const noexcept { return eig_.values; }
  const Matrix& scores() const noexcept { return scores_; }
  const Vector& y() const noexcept { return y_; }
  const Vector& x_bar() const noexcept { return x_bar_; }
  double y_bar() const noexcept { return y_bar_; }

  Vector coords(const Curve& f) const {
    require_same_grid(grid_, f.grid());
    return eig_.functions.transpose() * grid_->weights().cwiseProduct(f.values());
  }
  Curve to_curve(const Vector& c) const { return Curve(grid_, eig_.functions * c); }

  // Coordinates of sum_{j<=h} gamma_j^-1 c_j phi_j.
  Vector truncated_inverse(Index h, const Vector& c) const {
    require_truncation(h, rank(), "inverse");
    Vector out = Vector::Zero(rank());
    out.head(h) = c.head(h).cwiseQuotient(eig_.values.head(h));
    return out;
  }

  // Coordinates of Delta_n.
  Vector cross_covariance() const { return scores_.transpose() * y_ / static_cast<double>(n_); }

  Vector residuals(const Vector& beta) const { return y_ - scores_ * beta; }

 private:
  GridPtr grid_;
  Index n_;
  Vector x_bar_;
  double y_bar_;
  EigenSystem eig_;
  Matrix scores_;
  Vector y_;
};

struct FpcrFit {
  Index h = 0;
  Curve beta_hat;
  Vector coeffs;     // gamma_j^-1 <Delta_n, phi_j>, j <= h
  Vector residuals;  // (Y_i - Y_bar) - <beta_hat, X_i - X_bar>
  EigenSystem eig;
  Curve delta_hat;
};

inline FpcrFit fpcr_fit(const ScoreSpace& space, Index h) {
  require_truncation(h, space.rank(), "estimator");
  const Vector delta = space.cross_covariance();
  const Vector beta = space.truncated_inverse(h, delta);
  return FpcrFit{h,
                 space.to_curve(beta),
                 beta.head(h),
                 space.residuals(beta),
                 space.eig(),
                 Curve(space.grid(), space.eig().functions * delta)};
}

inline FpcrFit fpcr_fit(const FunctionalDataset& ds, Index h) {
  FpcrFit fit = fpcr_fit(ScoreSpace(ds), h);
  // Delta_n itself need not lie in the eigen span when n <= m; use the direct formula.
  fit.delta_hat = cross_covariance(ds);
  return fit;
}

// Lambda_{n,k} = n^-1 sum (X_i e_i - n^-1 sum X_j e_j)^{⊗2} with X_i centered.
inline LinearOperator lambda_hat(const FunctionalDataset& ds, const Vector& residuals) {
  if (residuals.size() != ds.n()) throw DimensionError("residuals length differs from sample size");
  Matrix A = ds.centered_X().array().colwise() * residuals.array();
  A.rowwise() -= A.colwise().mean();
  return LinearOperator::symmetric(ds.grid(), A.transpose() * A / static_cast<double>(ds.n()));
}

// s_h(x) = <Lambda a, a> with a = Gamma_h^-1 x; evaluated as a quadratic form.
inline double scaling_s_hat(const EigenSystem& eig, const LinearOperator& lambda_op, Index h, const Curve& x0) {
  const Curve a = truncated_inverse_apply(eig, h, x0);
  return std::max(0.0, inner_product(apply(lambda_op, a), a));
}

// U_{n,g} = n^-1 sum (X_i - X_bar)(e_{i,g} - e_bar_g).
inline Curve u_hat(const FunctionalDataset& ds, const Vector& residuals_g) {
  if (residuals_g.size() != ds.n()) throw DimensionError("residuals length differs from sample size");
  const Vector e = residuals_g.array() - residuals_g.mean();
  return Curve(ds.grid(), ds.centered_X().transpose() * e / static_cast<double>(ds.n()));
}

// Truncation levels: k for the residuals feeding the scale estimate, h for the
// estimator, g for the bootstrap centering slope.
struct TuningChoice {
  Index k = 1;
  Index h = 1;
  Index g = 1;

  void validate(Index rank) const {
    require_truncation(k, rank, "residual (k)");
    require_truncation(h, rank, "estimator (h)");
    require_truncation(g, rank, "centering (g)");
  }
  friend bool operator==(const TuningChoice&, const TuningChoice&) = default;
};

// g = k, h = round(1.113 k) clamped to [g, rank].
inline TuningChoice rule_of_thumb(Index k, Index rank) {
  if (k < 1) throw DomainError("rule of thumb needs k >= 1");
  const Index g = k;
  Index h = static_cast<Index>(std::lround(1.113 * static_cast<double>(k)));
  h = std::max(h, g);
  if (rank >= g) h = std::min(h, rank);
  return TuningChoice{k, h, g};
}

// Repeated K-fold cross-validation of the prediction error of beta_hat_k. Folds are
// contiguous blocks of a seeded permutation; ties go to the smaller k.
inline Index cv_select_k(const FunctionalDataset& ds, std::vector<Index> candidates, int folds, int repeats,
                         std::uint64_t seed) {
  if (candidates.empty()) throw DomainError("cross-validation needs at least one candidate k");
  if (folds < 2) throw DomainError("cross-validation needs at least 2 folds");
  if (repeats < 1) throw DomainError("cross-validation needs at least 1 repeat");
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  if (candidates.size() == 1) return candidates.front();
  const Index n = ds.n();
  if (folds > n) throw DomainError("more folds than observations");

  const ScoreSpace space(ds);
  const Matrix& Z = space.scores();
  const Vector& y = space.y();
  std::vector<double> sse(candidates.size(), 0.0);

  for (int rep = 0; rep < repeats; ++rep) {
    Engine eng = stream(seed, {static_cast<std::uint64_t>(rep)});
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), eng);
    for (int f = 0; f < folds; ++f) {
      const Index lo = n * f / folds, hi = n * (f + 1) / folds;
      std::vector<Index> train, test;
      for (Index i = 0; i < n; ++i) (i >= lo && i < hi ? test : train).push_back(perm[static_cast<std::size_t>(i)]);
      const Index nt = static_cast<Index>(train.size());
      const Matrix Zt = Z(train, Eigen::all);
      const Vector yt = y(train);
      const Vector zbar = Zt.colwise().mean().transpose();
      const double ybar = yt.mean();
      const Matrix Zc = Zt.rowwise() - zbar.transpose();
      const Spectrum spec = spectrum_of(Zc.transpose() * Zc / static_cast<double>(nt), space.m(), nt);
      const Vector d = Zc.transpose() * (yt.array() - ybar).matrix() / static_cast<double>(nt);
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        const Index k = candidates[c];
        if (k < 1 || k > spec.rank)
          throw TruncationError("candidate k = " + std::to_string(k) + " exceeds the rank " +
                                    std::to_string(spec.rank) + " of a training fold",
                                static_cast<std::size_t>(spec.rank));
        const Vector beta = spec.inverse_apply(k, d);
        for (Index i : test) {
          const double pred = ybar + (Z.row(i).transpose() - zbar).dot(beta);
          sse[c] += (y[i] - pred) * (y[i] - pred);
        }
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < candidates.size(); ++c)
    if (sse[c] < sse[best]) best = c;
  return candidates[best];
}

}  // namespace flrboot
