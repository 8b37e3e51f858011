#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "imps/sampler.hpp"

using namespace imps;

namespace {

// F = -log N(a, B) up to a constant
struct Gaussian {
  Vector a;
  Matrix b_inv;
  Objective objective() const {
    return Objective(
        a.size(), [this](const Vector& x) { return 0.5 * (x - a).dot(b_inv * (x - a)); },
        [this](const Vector& x) -> Vector { return b_inv * (x - a); },
        [this](const Vector&) { return b_inv; });
  }
};

Gaussian random_gaussian(Index m, Rng& rng) {
  Matrix a = Matrix::NullaryExpr(m, m, [&] { return rng.normal(); });
  Matrix b = a * a.transpose() + 0.5 * Matrix::Identity(m, m);
  return {rng.normal_vector(m), b.inverse()};
}

Objective quartic2() {
  return Objective(
      2, [](const Vector& x) { return 0.5 * x.squaredNorm() + 0.1 * std::pow(x[0], 4); },
      [](const Vector& x) -> Vector {
        Vector g = x;
        g[0] += 0.4 * std::pow(x[0], 3);
        return g;
      },
      [](const Vector& x) -> Matrix {
        Matrix h = Matrix::Identity(2, 2);
        h(0, 0) += 1.2 * x[0] * x[0];
        return h;
      });
}

double coefficient_of_variation(const std::vector<double>& lw) {
  const Vector w = normalize_log_weights(lw);
  const double mean = w.mean();
  return std::sqrt((w.array() - mean).square().mean()) / mean;
}

}  // namespace

TEST_CASE("prepare on a shifted quadratic") {
  Vector a(3);
  a << 1, -2, 0.5;
  Gaussian g{a, Matrix::Identity(3, 3)};
  Preparation p = prepare(g.objective(), Vector::Zero(3));
  CHECK((p.mu - a).norm() < 1e-12);
  CHECK(std::abs(p.phi) < 1e-20);
  CHECK((p.L - Matrix::Identity(3, 3)).norm() < 1e-12);
}

TEST_CASE("random map on a quadratic is the linear map") {
  Rng rng(1);
  Gaussian g = random_gaussian(3, rng);
  Objective f = g.objective();
  Preparation p = prepare(f, Vector::Zero(3));
  double first = 0;
  for (int k = 0; k < 20; ++k) {
    Vector xi = rng.normal_vector(3);
    ImplicitSample s = sample_random_map(f, p, xi);
    Vector lin = p.mu + p.L.transpose().triangularView<Eigen::Upper>().solve(xi);
    CHECK(s.lambda == doctest::Approx(xi.norm()).epsilon(1e-12));
    CHECK((s.x - lin).norm() < 1e-9);
    CHECK(std::abs(f(s.x) - p.phi - 0.5 * xi.squaredNorm()) < 1e-8 * (1 + std::abs(p.phi)));
    if (k == 0) first = s.log_jacobian;
    CHECK(std::abs(s.log_jacobian - first) < 1e-8);
    CHECK(std::abs(s.log_jacobian + p.log_det_L) < 1e-8);
  }
}

TEST_CASE("random map Jacobian against a finite-difference determinant") {
  Objective f = quartic2();
  Preparation p = prepare(f, Vector::Ones(2));
  Rng rng(7);
  for (int k = 0; k < 100; ++k) {
    const Vector xi = rng.normal_vector(2);
    ImplicitSample s = sample_random_map(f, p, xi);
    CHECK(s.lambda >= 0);
    CHECK(std::abs(f(s.x) - p.phi - 0.5 * xi.squaredNorm()) < 1e-8);
    auto map = [&](const Vector& z) { return sample_random_map(f, p, z).x; };
    const Matrix j = finite_diff_jacobian<double>(map, xi, 1e-5);
    const double oracle = std::log(std::abs(j.determinant()));
    CHECK(std::abs(std::exp(s.log_jacobian - oracle) - 1) < 1e-4);
    const double grad_form = random_map_log_jacobian_from_gradient(f, p, s);
    const double diff_form = random_map_log_jacobian_from_difference(f, p, s);
    CHECK(grad_form == s.log_jacobian);
    CHECK(std::abs(std::exp(diff_form - oracle) - 1) < 1e-4);
    CHECK(std::abs(std::exp(grad_form - diff_form) - 1) < 1e-6);
  }
  // without an analytic gradient the difference form is used
  const Objective value_only(2, [&](const Vector& x) { return f(x); });
  const ImplicitSample s = sample_random_map(value_only, p, Vector::Ones(2));
  CHECK(s.log_jacobian == random_map_log_jacobian_from_difference(value_only, p, s));
}

TEST_CASE("quadratic map weight, hand example") {
  Objective f(1, [](const Vector& x) { return 0.5 * x[0] * x[0] + std::pow(x[0], 4); });
  Preparation p = laplace(Vector::Zero(1), 0.0, Matrix::Identity(1, 1));
  ImplicitSample s = sample_quadratic_map(f, p, Vector::Ones(1));
  CHECK(s.x[0] == doctest::Approx(1.0));
  CHECK(s.log_weight == doctest::Approx(-1.0));
}

TEST_CASE("Gaussian exactness of both maps") {
  Rng rng(11);
  for (Index m : {1, 2, 5}) {
    Gaussian g = random_gaussian(m, rng);
    Objective f = g.objective();
    Preparation p = prepare(f, Vector::Zero(m));
    const Matrix b = g.b_inv.inverse();
    const double lmax = Eigen::SelfAdjointEigenSolver<Matrix>(b).eigenvalues().maxCoeff();
    for (MapKind kind : {MapKind::Random, MapKind::Quadratic}) {
      const int count = kind == MapKind::Random ? 2000 : 10000;
      WeightedEnsemble e = sample_ensemble(f, p, count, kind, 99 + m);
      CHECK(coefficient_of_variation(log_weights_of(e)) < 1e-10);
      Vector mean = Vector::Zero(m);
      for (int j = 0; j < count; ++j) mean += e.weights[j] * e.samples[j].x;
      CHECK((mean - g.a).norm() < 3 * std::sqrt(lmax / count) * std::sqrt(double(m)));
    }
  }
}

TEST_CASE("self-normalized second moment of a standard normal") {
  Objective f(1, [](const Vector& x) { return 0.5 * x[0] * x[0]; });
  Preparation p = prepare(f, Vector::Ones(1));
  const int count = 4000;
  WeightedEnsemble e = sample_ensemble(f, p, count, MapKind::Random, 5);
  double m2 = 0;
  for (int j = 0; j < count; ++j) m2 += e.weights[j] * e.samples[j].x[0] * e.samples[j].x[0];
  CHECK(std::abs(m2 - 1) < 3.0 / std::sqrt(double(count)));
}

TEST_CASE("weights of a non-Gaussian target estimate its mean") {
  // F = x^2/2 + x^4/4 is symmetric: mean 0; second moment by quadrature
  Objective f(1, [](const Vector& x) { return 0.5 * x[0] * x[0] + 0.25 * std::pow(x[0], 4); });
  Preparation p = prepare(f, Vector::Ones(1));
  double z = 0, m2 = 0;
  for (int i = -40000; i <= 40000; ++i) {
    const double x = i * 1e-4;
    const double d = std::exp(-0.5 * x * x - 0.25 * std::pow(x, 4));
    z += d;
    m2 += d * x * x;
  }
  m2 /= z;
  for (MapKind kind : {MapKind::Random, MapKind::Quadratic}) {
    const int count = 20000;
    WeightedEnsemble e = sample_ensemble(f, p, count, kind, 17);
    double est = 0;
    for (int j = 0; j < count; ++j) est += e.weights[j] * std::pow(e.samples[j].x[0], 2);
    CHECK(std::abs(est - m2) < 4 * m2 / std::sqrt(double(count)) * 2);
  }
}

TEST_CASE("normalization and ESS") {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> eq{0.3, 0.3, 0.3, 0.3};
  Vector w = normalize_log_weights(eq);
  CHECK(w.isApproxToConstant(0.25));
  CHECK(ess(w) == doctest::Approx(4.0));

  std::vector<double> one{0.0, -inf};
  w = normalize_log_weights(one);
  CHECK(w[0] == 1.0);
  CHECK(w[1] == 0.0);
  CHECK(ess(w) == doctest::Approx(1.0));

  std::vector<double> three{0.0, std::log(3.0)};
  w = normalize_log_weights(three);
  CHECK(w[0] == doctest::Approx(0.25));
  CHECK(w[1] == doctest::Approx(0.75));
  CHECK(ess(w) == doctest::Approx(1.6));

  std::vector<double> none{-inf, -inf};
  CHECK_THROWS_AS(normalize_log_weights(none), DegenerateEnsemble);

  std::vector<double> large{1000.0, 1000.0 + std::log(3.0)};
  w = normalize_log_weights(large);
  CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(0.75));
}

TEST_CASE("systematic resampling") {
  Rng rng(3);
  Vector uniform = Vector::Constant(5, 0.2);
  auto idx = resample_systematic(uniform, rng);
  for (Index k = 0; k < 5; ++k) CHECK(idx[k] == k);

  Vector point(4);
  point << 1, 0, 0, 0;
  idx = resample_systematic(point, rng);
  for (auto i : idx) CHECK(i == 0);

  Vector w(3);
  w << 0.5, 0.3, 0.2;
  Vector counts = Vector::Zero(3);
  const int trials = 100000;
  for (int t = 0; t < trials; ++t) {
    auto a = resample_systematic(w, rng);
    Vector c = Vector::Zero(3);
    for (auto i : a) c[i] += 1;
    for (Index j = 0; j < 3; ++j) {
      CHECK(c[j] >= std::floor(3 * w[j]));
      CHECK(c[j] <= std::ceil(3 * w[j]));
    }
    counts += c;
  }
  counts /= trials;
  CHECK(std::abs(counts[0] - 1.5) < 0.015);
  CHECK(std::abs(counts[1] - 0.9) < 0.009);
  CHECK(std::abs(counts[2] - 0.6) < 0.006);
}

TEST_CASE("ensembles are reproducible") {
  Objective f = quartic2();
  Preparation p = prepare(f, Vector::Ones(2));
  auto a = sample_ensemble(f, p, 50, MapKind::Random, 42);
  auto b = sample_ensemble(f, p, 50, MapKind::Random, 42);
  for (int j = 0; j < 50; ++j) {
    CHECK((a.samples[j].x - b.samples[j].x).norm() == 0.0);
    CHECK(a.weights[j] == b.weights[j]);
  }
}
