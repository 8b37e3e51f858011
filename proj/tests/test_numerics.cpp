#include <doctest.h>

#include <cmath>
#include <random>

#include "imps/numerics.hpp"

using namespace imps;

namespace {

double himmelblau_value(const Vector& x) {
  const double a = x[0] * x[0] + x[1] - 11;
  const double b = x[0] + x[1] * x[1] - 7;
  return a * a + b * b;
}

Objective half_norm(Index m) {
  return Objective(
      m, [](const Vector& x) { return 0.5 * x.squaredNorm(); }, [](const Vector& x) { return x; },
      [m](const Vector&) { return Matrix(Matrix::Identity(m, m)); });
}

// argmin over a uniform grid, refined once around the best cell
double grid_argmin(const std::function<double(double)>& g, double lo, double hi) {
  const double lo0 = lo, hi0 = hi;
  for (int pass = 0; pass < 3; ++pass) {
    const int n = 20001;
    double best = lo, fbest = g(lo);
    for (int i = 1; i < n; ++i) {
      const double x = lo + (hi - lo) * i / (n - 1);
      if (g(x) < fbest) fbest = g(x), best = x;
    }
    const double w = (hi - lo) / (n - 1);
    lo = std::max(lo0, best - w);
    hi = std::min(hi0, best + w);
  }
  return g(lo) < g(hi) ? (g(lo) < g(0.5 * (lo + hi)) ? lo : 0.5 * (lo + hi))
                       : (g(hi) < g(0.5 * (lo + hi)) ? hi : 0.5 * (lo + hi));
}

}  // namespace

TEST_CASE("cholesky of the identity") {
  Matrix l = cholesky(Matrix::Identity(3, 3));
  CHECK((l - Matrix::Identity(3, 3)).norm() == 0.0);
}

TEST_CASE("cholesky 2x2") {
  Matrix h(2, 2);
  h << 4, 2, 2, 3;
  Matrix l = cholesky(h);
  CHECK(l(0, 0) == doctest::Approx(2.0));
  CHECK(l(0, 1) == 0.0);
  CHECK(l(1, 0) == doctest::Approx(1.0));
  CHECK(l(1, 1) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("cholesky rejects an indefinite matrix") {
  Matrix h(2, 2);
  h << 1, 2, 2, 1;
  try {
    cholesky(h);
    FAIL("expected NotPositiveDefinite");
  } catch (const NotPositiveDefinite& e) {
    CHECK(e.pivot() == 1);
  }
}

TEST_CASE("cholesky rejects an asymmetric matrix") {
  Matrix h(2, 2);
  h << 2, 1, 0, 2;
  CHECK_THROWS_AS(cholesky(h), std::invalid_argument);
}

TEST_CASE("cholesky round trip on random SPD matrices") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 1 + trial % 12;
    Matrix a(n, n);
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = nd(gen);
    Matrix h = a * a.transpose() + 1e-3 * Matrix::Identity(n, n);
    h = 0.5 * (h + h.transpose());
    Matrix l = cholesky(h);
    CHECK(norm_inf(l * l.transpose() - h) / norm_inf(h) < 1e-10);
    CHECK(l.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().norm() == 0.0);
  }
}

TEST_CASE("newton on a quadratic takes one step") {
  Vector x0(2);
  x0 << 5, 5;
  auto r = newton_minimize(half_norm(2), x0);
  CHECK(r.converged);
  CHECK(r.iterations == 1);
  CHECK(r.minimizer.norm() < 1e-14);
  CHECK(r.minimum == doctest::Approx(0.0));
}

TEST_CASE("newton on random positive definite quadratics takes one step") {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + trial % 6;
    Matrix a = Matrix::NullaryExpr(n, n, [&] { return nd(gen); });
    Matrix h = a * a.transpose() + 0.5 * Matrix::Identity(n, n);
    Vector b = Vector::NullaryExpr(n, [&] { return nd(gen); });
    Objective f(
        n, [&](const Vector& x) { return 0.5 * x.dot(h * x) - b.dot(x); },
        [&](const Vector& x) -> Vector { return h * x - b; }, [&](const Vector&) { return h; });
    auto r = newton_minimize(f, Vector::Zero(n));
    CHECK(r.converged);
    CHECK(r.iterations == 1);
  }
}

TEST_CASE("newton reaches the Himmelblau stationary value from (-1,-4)") {
  Objective f(2, himmelblau_value);
  Vector x0(2);
  x0 << -1, -4;
  CHECK(himmelblau_value(x0) == doctest::Approx(260.0));
  auto r = newton_minimize(f, x0);
  CHECK(r.converged);
  CHECK(r.minimum == doctest::Approx(178.34).epsilon(0.0005 / 178.34 * 10));
  CHECK(std::abs(r.minimum - 178.34) < 0.005);
}

TEST_CASE("newton on a quartic matches a grid scan") {
  auto g = [](double x) { return std::pow(x - 3, 4) + 1; };
  Objective f(1, [&](const Vector& x) { return g(x[0]); });
  NewtonOptions opt;
  opt.grad_tol = 1e-10;
  auto r = newton_minimize(f, Vector::Zero(1), opt);
  const double ref = grid_argmin(g, 0, 6);
  CHECK(std::abs(r.minimizer[0] - ref) < 2e-2);
  CHECK(std::abs(r.minimum - 1.0) < 1e-8);
}

TEST_CASE("newton reports non-convergence at max_iter") {
  Objective f(1, [](const Vector& x) { return std::pow(x[0] - 3, 4) + 1; });
  NewtonOptions opt;
  opt.max_iter = 2;
  auto r = newton_minimize(f, Vector::Zero(1), opt);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 2);
}

TEST_CASE("constrained quadratic clamps to the nearer endpoint") {
  auto r = constrained_quadratic_minimize(half_norm(2), 0, Interval{1, 2});
  CHECK(r.minimizer[0] == doctest::Approx(1.0));
  CHECK(std::abs(r.minimizer[1]) < 1e-14);
  CHECK(r.minimum == doctest::Approx(0.5));
}

TEST_CASE("constrained quadratic with inactive constraint") {
  Vector a(2);
  a << 1.5, -1;
  Objective f(
      2, [&](const Vector& x) { return 0.5 * (x - a).squaredNorm(); },
      [&](const Vector& x) -> Vector { return x - a; }, [](const Vector&) { return Matrix(Matrix::Identity(2, 2)); });
  auto c = constrained_quadratic_minimize(f, 0, Interval{1, 2});
  auto u = newton_minimize(f, Vector::Zero(2));
  CHECK((c.minimizer - u.minimizer).norm() == 0.0);
  CHECK(c.minimum == u.minimum);
}

TEST_CASE("constrained quadratic versus a grid scan over the window") {
  // correlated quadratic: minimizing over x1 for each fixed x0 in the window
  Matrix h(3, 3);
  h << 4, 1, 0.5, 1, 3, 0.2, 0.5, 0.2, 2;
  Vector b(3);
  b << -5, 1, 2;
  Objective f(
      3, [&](const Vector& x) { return 0.5 * x.dot(h * x) + b.dot(x); },
      [&](const Vector& x) -> Vector { return h * x + b; }, [&](const Vector&) { return h; });
  auto c = constrained_quadratic_minimize(f, 0, Interval{-3, 0.5});
  auto profile = [&](double v) {
    // exact partial minimization over the free coordinates
    Matrix hff = h.bottomRightCorner(2, 2);
    Vector rhs = -(b.tail(2) + h.bottomLeftCorner(2, 1) * v);
    Vector rest = hff.llt().solve(rhs);
    Vector x(3);
    x << v, rest;
    return f(x);
  };
  const double vstar = grid_argmin(profile, -3, 0.5);
  CHECK(std::abs(c.minimizer[0] - vstar) < 1e-6);
  CHECK(std::abs(c.minimum - profile(vstar)) < 1e-8);
  auto u = newton_minimize(f, Vector::Zero(3));
  CHECK(c.minimum >= u.minimum);
}

TEST_CASE("solve_scalar quadratic") {
  auto g = [](double l) { return 0.5 * l * l; };
  const double r = solve_scalar(g, 2.0, Interval{0, 10}, 1e-12);
  CHECK(r == doctest::Approx(2.0));
  CHECK(std::abs(g(r) - 2.0) < 1e-12);
}

TEST_CASE("solve_scalar against a grid scan") {
  auto g = [](double l) { return l + std::sin(l); };
  const double r = solve_scalar(g, 1.0, Interval{0, 3}, 1e-13);
  const double ref = grid_argmin([&](double l) { return std::abs(g(l) - 1.0); }, 0, 3);
  CHECK(std::abs(r - ref) < 1e-6);
  CHECK(std::abs(r - 0.5110) < 1e-4);
}

TEST_CASE("solve_scalar expands the bracket") {
  auto g = [](double l) { return l * l * l; };
  const double r = solve_scalar(g, 1000.0, Interval{0, 1}, 1e-9);
  CHECK(r == doctest::Approx(10.0));
}

TEST_CASE("solve_scalar without a root") {
  auto g = [](double l) { return l * l; };
  CHECK_THROWS_AS(solve_scalar(g, -1.0, Interval{0, 1}, 1e-12), NoBracket);
}

TEST_CASE("finite differences") {
  Vector x(2);
  x << 1, 2;
  auto half = [](const Vector& v) { return 0.5 * v.squaredNorm(); };
  Vector g = finite_diff_gradient<double>(half, x, 1e-5);
  CHECK((g - x).norm() < 1e-8);
  Matrix h = finite_diff_hessian<double>(half, x, 1e-4);
  CHECK((h - Matrix::Identity(2, 2)).norm() < 1e-5);

  Vector m(2);
  m << 3, 2;
  Vector gh = finite_diff_gradient<double>(himmelblau_value, m, 1e-5);
  CHECK(gh.norm() < 1e-6);
}
