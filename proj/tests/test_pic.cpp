#include <doctest.h>

#include <cmath>

#include "imps/errors.hpp"
#include "imps/pic.hpp"

using namespace imps;

namespace {

Matrix mat1(double v) { return Matrix::Constant(1, 1, v); }
Vector vec1(double v) { return Vector::Constant(1, v); }

// dx = u dt + sqrt(sigma) dW in one dimension
ControlProblem brownian(double sigma, double r, std::function<double(const Vector&)> phi) {
  ControlProblem p;
  p.state_dim = 1;
  p.control_dim = 1;
  p.drift = [](const Vector&, double) { return Vector(Vector::Zero(1)); };
  p.G = mat1(1);
  p.Q = mat1(std::sqrt(sigma));
  p.R = mat1(r);
  p.gamma = sigma * r;
  p.drift_is_affine = true;
  p.final_cost = std::move(phi);
  return p;
}

// pendulum-like: state (angle, rate), noise on the rate only
ControlProblem nonlinear2() {
  ControlProblem p;
  p.state_dim = 2;
  p.control_dim = 1;
  p.drift = [](const Vector& y, double t) {
    Vector f(2);
    f << y[1], -std::sin(y[0]) - 0.3 * y[1] + 0.1 * t;
    return f;
  };
  p.G = Matrix(2, 1);
  p.G << 0, 1;
  p.Q = mat1(0.5);
  p.R = mat1(2.0);
  p.gamma = 0.5;  // gamma / R = Q^2
  p.potential = [](const Vector& y, double) { return 0.3 * y[0] * y[0] + std::cos(y[1]); };
  p.potential_gradient = [](const Vector& y, double) {
    Vector g(2);
    g << 0.6 * y[0], -std::sin(y[1]);
    return g;
  };
  p.final_cost = [](const Vector& y) { return 0.5 * y.squaredNorm() + 0.1 * std::pow(y[0], 4); };
  return p;
}

}  // namespace

TEST_CASE("condition check") {
  ControlProblem p = brownian(1.0, 0.1, [](const Vector&) { return 0.0; });
  CHECK_NOTHROW(p.check_condition());
  p.gamma = 0.2;
  CHECK_THROWS_AS(p.check_condition(), ConditionViolated);
  CHECK_THROWS_AS(path_objective(p, vec1(0), {0.1, 3, 0}), ConditionViolated);
}

TEST_CASE("free Brownian path objective") {
  ControlProblem p = brownian(1.0, 1.0, [](const Vector&) { return 0.0; });
  const PathDiscretization disc{0.1, 5, 0};
  Objective f = path_objective(p, vec1(0.7), disc);
  Preparation prep = prepare(f, Vector::Zero(5));
  CHECK((prep.mu - Vector::Constant(5, 0.7)).norm() < 1e-10);
  CHECK(std::abs(prep.phi) < 1e-18);
  Vector z(5);
  z << 1, 2, 0, -1, 3;
  double ref = 0, prev = 0.7;
  for (int i = 0; i < 5; ++i) {
    ref += 0.5 * (z[i] - prev) * (z[i] - prev) / 0.1;
    prev = z[i];
  }
  CHECK(f(z) == doctest::Approx(ref).epsilon(1e-14));
}

TEST_CASE("double slit post-wall objective") {
  const double gamma = 0.1;
  ControlProblem p = brownian(1.0, 0.1, [](const Vector& y) { return 0.5 * y[0] * y[0]; });
  const PathDiscretization disc{0.02, 4, 1.5};
  Objective f = path_objective(p, vec1(1.0), disc);
  Vector z(4);
  z << 0.9, 0.5, 0.6, 0.2;
  double ref = z[3] * z[3] / (2 * gamma);
  double prev = 1.0;
  for (int i = 0; i < 4; ++i) {
    ref += (z[i] - prev) * (z[i] - prev) / (2 * 0.02);
    prev = z[i];
  }
  CHECK(f(z) == doctest::Approx(ref).epsilon(1e-14));
}

TEST_CASE("path objective equals Gaussian increment densities plus cost") {
  ControlProblem p = nonlinear2();
  const PathDiscretization disc{0.05, 2, 0.3};
  Vector x(2);
  x << 0.4, -0.2;
  Objective f = path_objective(p, x, disc);
  Rng rng(2);
  // term-by-term: deterministic angle by Euler, rate increment Gaussian with
  // variance Q^2 dt around the Euler prediction
  auto oracle = [&](const Vector& z) {
    const double dt = disc.dt;
    const double var = 0.25 * dt;
    double th0 = x[0], w0 = x[1], total = 0;
    double pot = p.potential(x, disc.time(0));
    for (int i = 1; i <= 2; ++i) {
      const double th1 = th0 + dt * w0;
      const double mean = w0 + dt * (-std::sin(th0) - 0.3 * w0 + 0.1 * disc.time(i - 1));
      const double w1 = z[i - 1];
      const double logn = -0.5 * (w1 - mean) * (w1 - mean) / var - 0.5 * std::log(2 * M_PI * var);
      total -= logn + 0.5 * std::log(2 * M_PI * var);
      Vector yi(2);
      yi << th1, w1;
      const double v = p.potential(yi, disc.time(i));
      total += dt / (2 * p.gamma) * (pot + v);
      pot = v;
      th0 = th1;
      w0 = w1;
      if (i == 2) total += p.final_cost(yi) / p.gamma;
    }
    return total;
  };
  for (int k = 0; k < 10; ++k) {
    const Vector z = rng.normal_vector(2);
    CHECK(std::abs(f(z) - oracle(z)) < 1e-12 * (1 + std::abs(f(z))));
  }
}

TEST_CASE("analytic path gradient matches finite differences") {
  ControlProblem p = nonlinear2();
  const PathDiscretization disc{0.1, 6, 0};
  Vector x(2);
  x << 0.4, -0.2;
  Objective f = path_objective(p, x, disc);
  Rng rng(4);
  for (int k = 0; k < 5; ++k) {
    const Vector z = rng.normal_vector(6);
    const Vector g = f.gradient(z);
    const Vector fd = finite_diff_gradient<double>([&](const Vector& v) { return f(v); }, z, 1e-6);
    CHECK((g - fd).norm() < 1e-6 * (1 + g.norm()));
  }
}

TEST_CASE("path states propagate the deterministic coordinates") {
  ControlProblem p = nonlinear2();
  const PathDiscretization disc{0.1, 3, 0};
  Vector x(2);
  x << 0.4, -0.2;
  Vector z(3);
  z << 0.1, 0.3, -0.5;
  auto y = path_states(p, x, disc, z);
  REQUIRE(y.size() == 4);
  CHECK(y[1][0] == doctest::Approx(0.4 - 0.02));
  CHECK(y[2][0] == doctest::Approx(0.4 - 0.02 + 0.01));
  CHECK(y[3][1] == -0.5);
}

TEST_CASE("path cost") {
  ControlProblem p = brownian(1.0, 1.0, [](const Vector& y) { return 0.5 * y[0] * y[0]; });
  const PathDiscretization disc{0.5, 2, 0};
  CHECK(path_cost_G(p, {vec1(0), vec1(1), vec1(2)}, disc) == doctest::Approx(2.0));

  p.potential = [](const Vector& y, double t) {
    return (std::abs(t - 0.5) < 1e-9 && y[0] > 0.5) ? std::numeric_limits<double>::infinity() : 0.0;
  };
  CHECK(std::isinf(path_cost_G(p, {vec1(0), vec1(1), vec1(2)}, disc)));

  // trapezoid re-summed by hand on a smooth potential
  p.potential = [](const Vector& y, double t) { return y[0] * y[0] + t; };
  const std::vector<Vector> path{vec1(0.3), vec1(-0.4), vec1(1.1)};
  const double hand = 0.5 * 1.1 * 1.1 + 0.5 / 2 * ((0.09 + 0) + 2 * (0.16 + 0.5) + (1.21 + 1.0));
  CHECK(path_cost_G(p, path, disc) == doctest::Approx(hand).epsilon(1e-14));
}

TEST_CASE("psi on quadratic objectives is deterministic") {
  ControlProblem p = brownian(1.0, 0.1, [](const Vector& y) { return 0.5 * y[0] * y[0]; });
  const PathDiscretization disc{0.05, 8, 1.2};
  PsiOptions o;
  o.method = PsiMethod::SemiAnalytic;
  const double ref = estimate_psi(p, vec1(0.8), disc, o).log_psi;
  for (PsiMethod m : {PsiMethod::QuadraticMap, PsiMethod::RandomMap}) {
    for (int count : {1, 7, 100}) {
      o.method = m;
      o.samples = count;
      o.seed = static_cast<std::uint64_t>(count);
      CHECK(std::abs(estimate_psi(p, vec1(0.8), disc, o).log_psi - ref) < 1e-8);
    }
  }
  // closed form up to the constant dropped at this time: compare differences
  const double s = 2.0 - 1.6, gamma = 0.1;
  auto exact = [&](double x) { return -x * x / (2 * (s + gamma)); };
  o.method = PsiMethod::SemiAnalytic;
  const double d_num = estimate_psi(p, vec1(0.8), disc, o).log_psi - estimate_psi(p, vec1(-0.3), disc, o).log_psi;
  CHECK(std::abs(d_num - (exact(0.8) - exact(-0.3))) < 1e-10);
}

TEST_CASE("no cost anywhere: psi flat, control zero") {
  ControlProblem p = brownian(0.5, 2.0, [](const Vector&) { return 0.0; });
  const PathDiscretization disc{0.1, 5, 0};
  PsiOptions o;
  o.method = PsiMethod::RandomMap;
  o.samples = 20;
  const double a = estimate_psi(p, vec1(0.0), disc, o).log_psi;
  const double b = estimate_psi(p, vec1(3.0), disc, o).log_psi;
  CHECK(std::abs(a - b) < 1e-8);
  ControlOptions c;
  c.psi = o;
  CHECK(std::abs(optimal_control(p, vec1(1.5), disc, c)[0]) < 1e-6);
}

TEST_CASE("psi agrees with quadrature on a non-quadratic final cost") {
  // y_n ~ N(x, sigma n dt) exactly, so psi(x) = E exp(-Phi(y_n)/gamma)
  const double sigma = 0.8, r = 1.25;
  auto phi = [](double y) { return 0.25 * std::pow(y, 4) - 0.5 * y; };
  ControlProblem p = brownian(sigma, r, [&](const Vector& y) { return phi(y[0]); });
  const PathDiscretization disc{0.2, 3, 0};
  const double var = sigma * disc.steps * disc.dt;
  auto quad = [&](double x) {
    double acc = 0;
    const double h = 1e-3;
    for (double y = -12; y <= 12; y += h) {
      acc += std::exp(-(y - x) * (y - x) / (2 * var) - phi(y) / p.gamma) * h;
    }
    return std::log(acc / std::sqrt(2 * M_PI * var));
  };
  // estimates carry (sigma dt)^(n/2) from the increment densities
  const double shift = 0.5 * disc.steps * std::log(sigma * disc.dt);
  for (PsiMethod m : {PsiMethod::RandomMap, PsiMethod::QuadraticMap}) {
    PsiOptions o;
    o.method = m;
    o.samples = 10000;
    o.seed = 77;
    for (double x : {-0.5, 0.4, 1.0}) {
      const double est = estimate_psi(p, vec1(x), disc, o).log_psi - shift;
      CHECK(std::abs(std::exp(est - quad(x)) - 1) < 0.01);
    }
  }
}

TEST_CASE("common random numbers give an accurate cost-to-go gradient") {
  const double sigma = 1.0, r = 0.5;
  auto phi = [](double y) { return 0.25 * std::pow(y, 4) + 0.5 * y * y; };
  ControlProblem p = brownian(sigma, r, [&](const Vector& y) { return phi(y[0]); });
  const PathDiscretization disc{0.1, 4, 0};
  const double var = sigma * disc.steps * disc.dt;
  auto log_psi = [&](double x) {
    double acc = 0;
    const double h = 5e-4;
    for (double y = -12; y <= 12; y += h) acc += std::exp(-(y - x) * (y - x) / (2 * var) - phi(y) / p.gamma) * h;
    return std::log(acc);
  };
  const double x = 0.7;
  const double exact = -p.gamma * (log_psi(x + 1e-4) - log_psi(x - 1e-4)) / 2e-4;
  ControlOptions c;
  c.psi.method = PsiMethod::RandomMap;
  c.psi.samples = 400;
  // spread over seeds estimates the Monte Carlo error of the gradient
  std::vector<double> est;
  for (std::uint64_t s = 0; s < 8; ++s) {
    c.psi.seed = s;
    est.push_back(cost_to_go_gradient(p, vec1(x), disc, c)[0]);
  }
  double mean = 0, sd = 0;
  for (double e : est) mean += e / est.size();
  for (double e : est) sd += (e - mean) * (e - mean) / (est.size() - 1);
  sd = std::sqrt(sd);
  for (double e : est) CHECK(std::abs(e - exact) < 3 * sd + 1e-5 + 1e-3 * std::abs(exact));
  CHECK(std::abs(mean - exact) < 0.02 * std::abs(exact));
}

TEST_CASE("noiseless closed loop is pulled to the minimum of the final cost") {
  ControlProblem p = brownian(1.0, 1.0, [](const Vector& y) { return 0.5 * (y[0] - 2) * (y[0] - 2); });
  const PathDiscretization disc{0.05, 60, 0};
  ControlOptions c;
  c.psi.method = PsiMethod::SemiAnalytic;
  Trajectory t = simulate_closed_loop(p, vec1(-1.0), disc, c, 5, false);
  CHECK(std::abs(t.x.back()[0] - 2) < std::abs(t.x.front()[0] - 2) * 0.5);
  for (std::size_t k = 1; k < t.x.size(); ++k) CHECK(std::abs(t.x[k][0] - 2) <= std::abs(t.x[k - 1][0] - 2) + 1e-12);
}

TEST_CASE("seeded closed loop repeats exactly") {
  ControlProblem p = nonlinear2();
  const PathDiscretization disc{0.1, 5, 0};
  ControlOptions c;
  c.psi.method = PsiMethod::RandomMap;
  c.psi.samples = 10;
  c.psi.seed = 9;
  Vector x(2);
  x << 0.5, 0.1;
  Trajectory a = simulate_closed_loop(p, x, disc, c, 3);
  Trajectory b = simulate_closed_loop(p, x, disc, c, 3);
  for (std::size_t k = 0; k < a.x.size(); ++k) CHECK((a.x[k] - b.x[k]).norm() == 0.0);
  for (std::size_t k = 0; k < a.u.size(); ++k) CHECK((a.u[k] - b.u[k]).norm() == 0.0);
}
