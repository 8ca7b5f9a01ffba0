#pragma once

// Discretized L2 space: every inner product, norm and tensor product in the library
// is a weighted quadrature over a shared Grid.

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "flrboot/errors.hpp"

namespace flrboot {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class QuadratureRule { rectangle, trapezoid };

class Grid {
 public:
  Grid(Vector points, Vector weights) : points_(std::move(points)), weights_(std::move(weights)) {
    if (points_.size() < 2) throw DomainError("grid needs at least 2 points");
    if (weights_.size() != points_.size()) throw DimensionError("grid weights length differs from points");
    for (Index i = 0; i < points_.size(); ++i) {
      if (!std::isfinite(points_[i])) throw DomainError("grid point is not finite");
      if (i > 0 && !(points_[i] > points_[i - 1])) throw DomainError("grid points must be strictly increasing");
      if (!(weights_[i] > 0.0) || !std::isfinite(weights_[i])) throw DomainError("grid weights must be positive");
    }
  }

  // m equally spaced midpoints of [lo, hi] with rectangle weights (hi - lo) / m.
  static std::shared_ptr<const Grid> uniform(Index m, double lo = 0.0, double hi = 1.0) {
    if (m < 2) throw DomainError("grid needs at least 2 points");
    if (!(hi > lo)) throw DomainError("grid interval must have positive length");
    const double w = (hi - lo) / static_cast<double>(m);
    Vector t(m);
    for (Index i = 0; i < m; ++i) t[i] = lo + (static_cast<double>(i) + 0.5) * w;
    return std::make_shared<const Grid>(std::move(t), Vector::Constant(m, w));
  }

  // User-supplied abscissae. The rectangle rule requires equal spacing and gives every
  // point the common spacing as weight; the trapezoid rule works for any spacing.
  static std::shared_ptr<const Grid> from_points(const Vector& t, QuadratureRule rule) {
    const Index m = t.size();
    if (m < 2) throw DomainError("grid needs at least 2 points");
    Vector w(m);
    if (rule == QuadratureRule::rectangle) {
      const double h = (t[m - 1] - t[0]) / static_cast<double>(m - 1);
      for (Index i = 1; i < m; ++i) {
        if (std::abs((t[i] - t[i - 1]) - h) > 1e-9 * std::max(1.0, std::abs(h)))
          throw DomainError("rectangle quadrature needs equally spaced grid points");
      }
      w.setConstant(h);
    } else {
      w.setZero();
      for (Index i = 0; i + 1 < m; ++i) {
        const double half = 0.5 * (t[i + 1] - t[i]);
        w[i] += half;
        w[i + 1] += half;
      }
    }
    return std::make_shared<const Grid>(t, std::move(w));
  }

  Index size() const noexcept { return points_.size(); }
  const Vector& points() const noexcept { return points_; }
  const Vector& weights() const noexcept { return weights_; }

  bool same_as(const Grid& other) const noexcept {
    return this == &other || (points_.size() == other.points_.size() && points_ == other.points_ &&
                              weights_ == other.weights_);
  }

 private:
  Vector points_;
  Vector weights_;
};

using GridPtr = std::shared_ptr<const Grid>;

inline void require_same_grid(const GridPtr& a, const GridPtr& b) {
  if (!a || !b || !a->same_as(*b)) throw DimensionError("curves are defined on different grids");
}

class Curve {
 public:
  Curve(GridPtr grid, Vector values) : grid_(std::move(grid)), values_(std::move(values)) {
    if (!grid_) throw DimensionError("curve without grid");
    if (values_.size() != grid_->size()) throw DimensionError("curve length differs from grid size");
    if (!values_.allFinite()) throw DomainError("curve values must be finite");
  }

  static Curve zero(const GridPtr& grid) { return Curve(grid, Vector::Zero(grid->size())); }

  const GridPtr& grid() const noexcept { return grid_; }
  const Vector& values() const noexcept { return values_; }
  Index size() const noexcept { return values_.size(); }
  double operator[](Index i) const { return values_[i]; }

  Curve& operator+=(const Curve& o) {
    require_same_grid(grid_, o.grid_);
    values_ += o.values_;
    return *this;
  }
  Curve& operator-=(const Curve& o) {
    require_same_grid(grid_, o.grid_);
    values_ -= o.values_;
    return *this;
  }
  Curve& operator*=(double c) {
    values_ *= c;
    return *this;
  }
  friend Curve operator+(Curve a, const Curve& b) { return a += b; }
  friend Curve operator-(Curve a, const Curve& b) { return a -= b; }
  friend Curve operator*(double c, Curve a) { return a *= c; }
  friend Curve operator*(Curve a, double c) { return a *= c; }

 private:
  GridPtr grid_;
  Vector values_;
};

// Kernel representation: (K f)(t_i) = sum_j K[i,j] w_j f(t_j).
class LinearOperator {
 public:
  LinearOperator(GridPtr grid, Matrix kernel) : grid_(std::move(grid)), kernel_(std::move(kernel)) {
    if (!grid_) throw DimensionError("operator without grid");
    if (kernel_.rows() != grid_->size() || kernel_.cols() != grid_->size())
      throw DimensionError("operator kernel must be m x m");
    if (!kernel_.allFinite()) throw DomainError("operator kernel must be finite");
  }

  static LinearOperator zero(const GridPtr& grid) {
    return LinearOperator(grid, Matrix::Zero(grid->size(), grid->size()));
  }

  // Identity: K[i,j] = delta_ij / w_j.
  static LinearOperator identity(const GridPtr& grid) {
    return LinearOperator(grid, grid->weights().cwiseInverse().asDiagonal().toDenseMatrix());
  }

  // Stores (K + K^T) / 2.
  static LinearOperator symmetric(GridPtr grid, const Matrix& kernel) {
    Matrix sym = 0.5 * (kernel + kernel.transpose());
    return LinearOperator(std::move(grid), std::move(sym));
  }

  const GridPtr& grid() const noexcept { return grid_; }
  const Matrix& kernel() const noexcept { return kernel_; }

  bool is_symmetric(double rel_tol = 1e-10) const {
    const double scale = kernel_.cwiseAbs().maxCoeff();
    if (scale == 0.0) return true;
    return (kernel_ - kernel_.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
  }

  LinearOperator& operator+=(const LinearOperator& o) {
    require_same_grid(grid_, o.grid_);
    kernel_ += o.kernel_;
    return *this;
  }
  LinearOperator& operator*=(double c) {
    kernel_ *= c;
    return *this;
  }
  friend LinearOperator operator+(LinearOperator a, const LinearOperator& b) { return a += b; }
  friend LinearOperator operator*(double c, LinearOperator a) { return a *= c; }

 private:
  GridPtr grid_;
  Matrix kernel_;
};

inline double inner_product(const Curve& a, const Curve& b) {
  require_same_grid(a.grid(), b.grid());
  return (a.grid()->weights().array() * a.values().array() * b.values().array()).sum();
}

inline double norm_squared(const Curve& a) { return inner_product(a, a); }
inline double norm(const Curve& a) { return std::sqrt(norm_squared(a)); }

// (a ⊗ b)(z) = <z, a> b, i.e. kernel K[i,j] = b(t_i) a(t_j).
inline LinearOperator tensor_product(const Curve& a, const Curve& b) {
  require_same_grid(a.grid(), b.grid());
  return LinearOperator(a.grid(), b.values() * a.values().transpose());
}

inline Curve apply(const LinearOperator& op, const Curve& f) {
  require_same_grid(op.grid(), f.grid());
  return Curve(f.grid(), op.kernel() * f.grid()->weights().cwiseProduct(f.values()));
}

}  // namespace flrboot
