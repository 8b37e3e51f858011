#ifndef IMPS_NUMERICS_HPP
#define IMPS_NUMERICS_HPP

// Small dense linear algebra, Newton minimization, single-coordinate
// constrained quadratic minimization, scalar root finding and central
// finite-difference oracles. Everything here is templated on the scalar
// type and header-only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <type_traits>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>

#include "imps/errors.hpp"

namespace imps {

using Index = Eigen::Index;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;

template <typename Scalar>
struct BasicInterval {
  Scalar lo;
  Scalar hi;

  bool contains(Scalar v) const { return lo <= v && v <= hi; }
  Scalar width() const { return hi - lo; }
};

using Interval = BasicInterval<double>;

/// Infinity norm (maximum absolute row sum).
template <typename Derived>
typename Derived::Scalar norm_inf(const Eigen::MatrixBase<Derived>& a) {
  if (a.size() == 0) return typename Derived::Scalar(0);
  return a.cwiseAbs().rowwise().sum().maxCoeff();
}

/// Lower-triangular L with H = L L^T. Throws NotPositiveDefinite naming the
/// first non-positive pivot.
template <typename Derived>
MatrixX<typename Derived::Scalar> cholesky(const Eigen::MatrixBase<Derived>& h) {
  using Scalar = typename Derived::Scalar;
  if (h.rows() != h.cols()) throw std::invalid_argument("cholesky: matrix is not square");
  const Index n = h.rows();
  const Scalar scale = norm_inf(h);
  if (norm_inf(h - h.transpose()) > Scalar(1e-10) * scale) {
    throw std::invalid_argument("cholesky: matrix is not symmetric");
  }
  MatrixX<Scalar> l = MatrixX<Scalar>::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    const Scalar d = h(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > Scalar(0))) throw NotPositiveDefinite(static_cast<long>(j));
    const Scalar ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Index i = j + 1; i < n; ++i) {
      l(i, j) = (h(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / ljj;
    }
  }
  return l;
}

/// log det L for a triangular factor with positive diagonal.
template <typename Derived>
typename Derived::Scalar log_det_triangular(const Eigen::MatrixBase<Derived>& l) {
  return l.diagonal().array().log().sum();
}

// ---------------------------------------------------------------------------
// Finite differences (central).

template <typename Scalar, typename F>
VectorX<Scalar> finite_diff_gradient(F&& f, const VectorX<Scalar>& x, Scalar h) {
  VectorX<Scalar> g(x.size());
  VectorX<Scalar> xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar hi = h * std::max(Scalar(1), std::abs(x[i]));
    xp[i] = x[i] + hi;
    const Scalar fp = f(xp);
    xp[i] = x[i] - hi;
    const Scalar fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (Scalar(2) * hi);
  }
  return g;
}

/// Hessian from function values only.
template <typename Scalar, typename F>
MatrixX<Scalar> finite_diff_hessian(F&& f, const VectorX<Scalar>& x, Scalar h) {
  const Index n = x.size();
  MatrixX<Scalar> hess(n, n);
  VectorX<Scalar> step(n);
  for (Index i = 0; i < n; ++i) step[i] = h * std::max(Scalar(1), std::abs(x[i]));
  const Scalar f0 = f(x);
  VectorX<Scalar> xp = x;
  for (Index i = 0; i < n; ++i) {
    xp[i] = x[i] + step[i];
    const Scalar fp = f(xp);
    xp[i] = x[i] - step[i];
    const Scalar fm = f(xp);
    xp[i] = x[i];
    hess(i, i) = (fp - Scalar(2) * f0 + fm) / (step[i] * step[i]);
    for (Index j = 0; j < i; ++j) {
      auto at = [&](Scalar si, Scalar sj) {
        xp[i] = x[i] + si * step[i];
        xp[j] = x[j] + sj * step[j];
        const Scalar v = f(xp);
        xp[i] = x[i];
        xp[j] = x[j];
        return v;
      };
      const Scalar v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) /
                       (Scalar(4) * step[i] * step[j]);
      hess(i, j) = v;
      hess(j, i) = v;
    }
  }
  return hess;
}

/// Jacobian of a vector-valued map; column i holds the derivative along x_i.
template <typename Scalar, typename G>
MatrixX<Scalar> finite_diff_jacobian(G&& g, const VectorX<Scalar>& x, Scalar h) {
  VectorX<Scalar> xp = x;
  MatrixX<Scalar> jac;
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar hi = h * std::max(Scalar(1), std::abs(x[i]));
    xp[i] = x[i] + hi;
    const VectorX<Scalar> gp = g(xp);
    xp[i] = x[i] - hi;
    const VectorX<Scalar> gm = g(xp);
    xp[i] = x[i];
    if (i == 0) jac.resize(gp.size(), x.size());
    jac.col(i) = (gp - gm) / (Scalar(2) * hi);
  }
  return jac;
}

// ---------------------------------------------------------------------------
// Objective

/// A twice differentiable scalar function of an m-vector. Gradient and Hessian
/// are optional; missing derivatives fall back to central differences.
template <typename Scalar>
class BasicObjective {
 public:
  using Vec = VectorX<Scalar>;
  using Mat = MatrixX<Scalar>;
  using ValueFn = std::function<Scalar(const Vec&)>;
  using GradientFn = std::function<Vec(const Vec&)>;
  using HessianFn = std::function<Mat(const Vec&)>;

  BasicObjective() = default;
  BasicObjective(Index dimension, ValueFn value, GradientFn gradient = {}, HessianFn hessian = {})
      : dimension_(dimension),
        value_(std::move(value)),
        gradient_(std::move(gradient)),
        hessian_(std::move(hessian)) {}

  Index dimension() const { return dimension_; }

  Scalar operator()(const Vec& x) const { return value_(x); }

  Vec gradient(const Vec& x) const {
    if (gradient_) return gradient_(x);
    return finite_diff_gradient<Scalar>(value_, x, Scalar(1e-6));
  }

  Mat hessian(const Vec& x) const {
    if (hessian_) return hessian_(x);
    if (gradient_) {
      Mat j = finite_diff_jacobian<Scalar>(gradient_, x, Scalar(1e-6));
      return Scalar(0.5) * (j + j.transpose());
    }
    return finite_diff_hessian<Scalar>(value_, x, Scalar(1e-4));
  }

  bool has_gradient() const { return static_cast<bool>(gradient_); }
  bool has_hessian() const { return static_cast<bool>(hessian_); }

 private:
  Index dimension_ = 0;
  ValueFn value_;
  GradientFn gradient_;
  HessianFn hessian_;
};

using Objective = BasicObjective<double>;

// ---------------------------------------------------------------------------
// Newton minimization

enum class HessianPolicy {
  /// Solve H d = -g whatever the inertia of H; converges to any nondegenerate
  /// stationary point (classical Newton).
  Exact,
  /// Add a multiple of the identity until H is positive definite; every step
  /// is a descent step and the iteration settles on minima.
  Convexified,
};

struct NewtonOptions {
  double grad_tol = 1e-8;
  int max_iter = 100;
  double armijo = 1e-4;
  int max_backtracks = 60;
  HessianPolicy policy = HessianPolicy::Exact;
};

template <typename Scalar>
struct MinimizeResult {
  VectorX<Scalar> minimizer;
  Scalar minimum{};
  MatrixX<Scalar> hessian;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

template <typename Scalar>
bool newton_direction(const MatrixX<Scalar>& h, const VectorX<Scalar>& g, HessianPolicy policy,
                      VectorX<Scalar>& d) {
  Eigen::LLT<MatrixX<Scalar>> llt(h);
  if (llt.info() == Eigen::Success) {
    d = -llt.solve(g);
    return d.allFinite();
  }
  if (policy == HessianPolicy::Exact) {
    Eigen::FullPivLU<MatrixX<Scalar>> lu(h);
    if (!lu.isInvertible()) return false;
    d = -lu.solve(g);
    return d.allFinite();
  }
  // Cholesky with added multiple of the identity.
  const Index n = h.rows();
  const Scalar diag_scale = std::max(Scalar(1e-8), h.diagonal().cwiseAbs().mean());
  const Scalar beta = Scalar(1e-3) * diag_scale;
  const Scalar min_diag = h.diagonal().minCoeff();
  Scalar tau = min_diag > 0 ? beta : beta - min_diag;
  for (int k = 0; k < 80; ++k) {
    MatrixX<Scalar> shifted = h;
    shifted.diagonal().array() += tau;
    llt.compute(shifted);
    if (llt.info() == Eigen::Success) {
      d = -llt.solve(g);
      return d.allFinite();
    }
    tau *= Scalar(2);
  }
  (void)n;
  return false;
}

}  // namespace detail

/// Newton's method with backtracking Armijo line search (factor 1/2). A
/// singular Hessian or a non-descent Newton direction falls back to steepest
/// descent for that iteration. Hitting max_iter returns converged = false.
template <typename Scalar>
MinimizeResult<Scalar> newton_minimize(const BasicObjective<Scalar>& f, std::type_identity_t<VectorX<Scalar>> x0,
                                       const NewtonOptions& options = {}) {
  if (options.max_iter < 1) throw std::invalid_argument("newton_minimize: max_iter must be >= 1");
  MinimizeResult<Scalar> result;
  VectorX<Scalar> x = std::move(x0);
  Scalar fx = f(x);
  VectorX<Scalar> g = f.gradient(x);
  int it = 0;
  bool converged = false;
  for (; it <= options.max_iter; ++it) {
    if (g.norm() <= Scalar(options.grad_tol)) {
      converged = true;
      break;
    }
    if (it == options.max_iter) break;
    VectorX<Scalar> d;
    const MatrixX<Scalar> h = f.hessian(x);
    bool newton = detail::newton_direction(h, g, options.policy, d);
    Scalar slope = newton ? g.dot(d) : Scalar(0);
    VectorX<Scalar> newton_step;
    Scalar newton_slope = 0;
    if (newton && slope < 0) {
      newton_step = d;
      newton_slope = slope;
    }
    if (!newton || !(slope < 0)) {
      d = -g;
      slope = -g.squaredNorm();
      newton = false;
    }
    bool accepted = false;
    VectorX<Scalar> xn;
    Scalar fn{};
    // Newton decrement at the rounding level of F: the minimizer is found to
    // working precision even if |g| is still above grad_tol (stiff F). Take
    // the full step if it does not raise F and stop.
    const Scalar roundoff = Scalar(1e3) * std::numeric_limits<Scalar>::epsilon() * (1 + std::abs(fx));
    if (newton_step.size() > 0 && -newton_slope <= roundoff) {
      xn = x + newton_step;
      fn = f(xn);
      if (std::isfinite(fn) && fn <= fx + roundoff) {
        x = std::move(xn);
        fx = fn;
        g = f.gradient(x);
      }
      converged = true;
      break;
    }
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      Scalar alpha = 1;
      for (int k = 0; k < options.max_backtracks; ++k) {
        xn = x + alpha * d;
        fn = f(xn);
        if (std::isfinite(fn) && fn <= fx + Scalar(options.armijo) * alpha * slope) {
          accepted = true;
          break;
        }
        alpha *= Scalar(0.5);
      }
      if (!accepted && newton) {
        d = -g;
        slope = -g.squaredNorm();
        newton = false;
      } else {
        break;
      }
    }
    if (!accepted) break;  // no decrease possible at working precision
    x = std::move(xn);
    fx = fn;
    g = f.gradient(x);
  }
  result.iterations = it;
  result.converged = converged;
  result.minimum = fx;
  result.hessian = f.hessian(x);
  result.minimizer = std::move(x);
  return result;
}

/// Minimizes a quadratic objective with coordinate `index` restricted to
/// `window`. An inactive constraint returns the unconstrained minimizer;
/// otherwise the coordinate is clamped to the nearer endpoint and the other
/// coordinates are re-minimized exactly.
template <typename Scalar>
MinimizeResult<Scalar> constrained_quadratic_minimize(const BasicObjective<Scalar>& f, Index index,
                                                      const BasicInterval<Scalar>& window,
                                                      const NewtonOptions& options = {}) {
  if (!(window.lo < window.hi)) throw std::invalid_argument("constrained_quadratic_minimize: empty window");
  if (index < 0 || index >= f.dimension()) throw std::out_of_range("constrained_quadratic_minimize: index");
  MinimizeResult<Scalar> free = newton_minimize(f, VectorX<Scalar>::Zero(f.dimension()), options);
  const Scalar v = free.minimizer[index];
  if (window.contains(v)) return free;
  const Scalar target = v < window.lo ? window.lo : window.hi;
  const MatrixX<Scalar> l = cholesky(free.hessian);
  VectorX<Scalar> e = VectorX<Scalar>::Zero(f.dimension());
  e[index] = 1;
  // Column `index` of H^-1.
  const VectorX<Scalar> w = l.transpose().template triangularView<Eigen::Upper>().solve(
      l.template triangularView<Eigen::Lower>().solve(e));
  MinimizeResult<Scalar> out = std::move(free);
  out.minimizer += w * ((target - v) / w[index]);
  out.minimizer[index] = target;
  out.minimum = f(out.minimizer);
  return out;
}

// ---------------------------------------------------------------------------
// Scalar root finding

enum class BracketExpansion { Both, Upper };

struct ScalarSolveOptions {
  /// Early exit once |g(x) - target| < tol.
  double tol = 1e-12;
  /// When the bracket collapses to adjacent floating-point values the best
  /// point is accepted if its residual is below this value.
  double collapse_tol = 1e-12;
  BracketExpansion expansion = BracketExpansion::Both;
  int max_expansions = 60;
};

/// Solves g(x) = target for monotone g by regula falsi (Illinois) guarded with
/// bisection. The bracket is widened by doubling when it does not straddle the
/// root.
template <typename Scalar, typename G>
Scalar solve_scalar(G&& g, Scalar target, BasicInterval<Scalar> bracket,
                    const ScalarSolveOptions& options) {
  Scalar lo = bracket.lo;
  Scalar hi = bracket.hi;
  if (!(lo < hi)) throw std::invalid_argument("solve_scalar: empty bracket");
  Scalar flo = g(lo) - target;
  Scalar fhi = g(hi) - target;
  auto same_sign = [](Scalar a, Scalar b) { return (a > 0 && b > 0) || (a < 0 && b < 0); };
  int expansions = 0;
  while (same_sign(flo, fhi) || std::isnan(flo) || std::isnan(fhi)) {
    if (++expansions > options.max_expansions) throw NoBracket("solve_scalar: no sign change found");
    const Scalar w = hi - lo;
    if (options.expansion == BracketExpansion::Upper || std::abs(fhi) < std::abs(flo)) {
      hi += w;
      fhi = g(hi) - target;
    } else {
      lo -= w;
      flo = g(lo) - target;
    }
  }
  if (flo == 0) return lo;
  if (fhi == 0) return hi;

  Scalar best = std::abs(flo) < std::abs(fhi) ? lo : hi;
  Scalar best_res = std::min(std::abs(flo), std::abs(fhi));
  int side = 0;
  Scalar last_width = hi - lo;
  int slow = 0;
  for (int it = 0; it < 400; ++it) {
    Scalar x;
    if (slow >= 2) {
      x = lo + (hi - lo) / 2;
      slow = 0;
    } else {
      x = (lo * fhi - hi * flo) / (fhi - flo);
      if (!(x > lo && x < hi)) x = lo + (hi - lo) / 2;
    }
    if (!(x > lo && x < hi)) break;  // bracket collapsed
    const Scalar fx = g(x) - target;
    if (std::abs(fx) < best_res) {
      best = x;
      best_res = std::abs(fx);
    }
    if (best_res < Scalar(options.tol) || fx == 0) return best;
    if (same_sign(fx, flo)) {
      lo = x;
      flo = fx;
      if (side == -1) fhi /= 2;
      side = -1;
    } else {
      hi = x;
      fhi = fx;
      if (side == 1) flo /= 2;
      side = 1;
    }
    const Scalar width = hi - lo;
    slow = width > Scalar(0.5) * last_width ? slow + 1 : 0;
    last_width = width;
  }
  if (best_res < Scalar(options.collapse_tol)) return best;
  throw NotConverged("solve_scalar: residual above tolerance at working precision");
}

/// Convenience form: early exit at |g(x) - target| < tol.
template <typename Scalar, typename G>
Scalar solve_scalar(G&& g, Scalar target, BasicInterval<Scalar> bracket, Scalar tol) {
  ScalarSolveOptions options;
  options.tol = static_cast<double>(tol);
  options.collapse_tol = static_cast<double>(tol);
  return solve_scalar(std::forward<G>(g), target, bracket, options);
}

}  // namespace imps

#endif  // IMPS_NUMERICS_HPP
