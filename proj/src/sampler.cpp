#include "imps/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "imps/errors.hpp"

namespace imps {

Preparation laplace(Vector mu, double phi, const Matrix& hessian) {
  Preparation p;
  p.mu = std::move(mu);
  p.phi = phi;
  Matrix h = 0.5 * (hessian + hessian.transpose());
  p.L = cholesky(h);
  p.log_det_L = log_det_triangular(p.L);
  return p;
}

Preparation prepare(const Objective& f, const Vector& x0, const NewtonOptions& options) {
  MinimizeResult<double> r = newton_minimize(f, x0, options);
  if (!r.converged) throw NotConverged("prepare: Newton did not converge");
  Preparation p = laplace(std::move(r.minimizer), r.minimum, r.hessian);
  p.iterations = r.iterations;
  return p;
}

namespace {

Vector solve_lt(const Matrix& l, const Vector& v) {
  return l.transpose().triangularView<Eigen::Upper>().solve(v);
}

double solve_lambda(const Objective& f, const Preparation& prep, const Vector& dir, double rho,
                    BasicInterval<double> bracket, BracketExpansion expansion) {
  auto g = [&](double lam) { return f(prep.mu + lam * dir) - prep.phi; };
  ScalarSolveOptions opt;
  opt.tol = 0;  // run to working precision; dlambda/drho differences lambda
  opt.collapse_tol = 0.5e-8 * (1 + std::abs(prep.phi));
  opt.expansion = expansion;
  return solve_scalar(g, 0.5 * rho, bracket, opt);
}

}  // namespace

namespace {

double random_map_log_jacobian(Index m, double rho, double lambda, double dlam, double log_det_L) {
  return std::log(2 * std::sqrt(rho)) + 0.5 * (1.0 - m) * std::log(rho) + (m - 1.0) * std::log(lambda) +
         std::log(std::abs(dlam)) - log_det_L;
}

}  // namespace

ImplicitSample sample_random_map(const Objective& f, const Preparation& prep, const Vector& xi) {
  const double rho = xi.squaredNorm();
  if (!(rho > 0)) throw std::invalid_argument("sample_random_map: zero reference draw");
  const double sq = std::sqrt(rho);
  const Vector dir = solve_lt(prep.L, xi / sq);

  ImplicitSample s;
  s.xi = xi;
  s.lambda = solve_lambda(f, prep, dir, rho, {0.0, 2 * sq}, BracketExpansion::Upper);
  s.x = prep.mu + s.lambda * dir;
  // an analytic gradient keeps dlambda/drho at rounding level for tiny rho,
  // where the difference quotient loses ~1e5 of the root's precision
  s.log_jacobian = f.has_gradient() ? random_map_log_jacobian_from_gradient(f, prep, s)
                                    : random_map_log_jacobian_from_difference(f, prep, s);
  s.log_weight = -prep.phi + s.log_jacobian;
  return s;
}

double random_map_log_jacobian_from_difference(const Objective& f, const Preparation& prep,
                                               const ImplicitSample& s) {
  const double rho = s.xi.squaredNorm();
  const Vector dir = solve_lt(prep.L, s.xi / std::sqrt(rho));
  // d lambda / d rho by central differences, re-solving near lambda.
  const double h = 1e-5 * rho;
  auto lam_at = [&](double r) {
    const double w = std::max(1e-8, 0.01 * s.lambda);
    return solve_lambda(f, prep, dir, r, {s.lambda - w, s.lambda + w}, BracketExpansion::Both);
  };
  const double dlam = (lam_at(rho + h) - lam_at(rho - h)) / (2 * h);
  return random_map_log_jacobian(s.xi.size(), rho, s.lambda, dlam, prep.log_det_L);
}

double random_map_log_jacobian_from_gradient(const Objective& f, const Preparation& prep,
                                             const ImplicitSample& s) {
  const double rho = s.xi.squaredNorm();
  const Vector dir = solve_lt(prep.L, s.xi / std::sqrt(rho));
  const double dlam = 1.0 / (2.0 * f.gradient(s.x).dot(dir));
  return random_map_log_jacobian(s.xi.size(), rho, s.lambda, dlam, prep.log_det_L);
}

ImplicitSample sample_quadratic_map(const Objective& f, const Preparation& prep, const Vector& xi) {
  ImplicitSample s;
  s.xi = xi;
  s.x = prep.mu + solve_lt(prep.L, xi);
  s.log_jacobian = -prep.log_det_L;
  // -phi + F_hat(x) - F(x), with F_hat(x) = phi + |xi|^2/2.
  s.log_weight = 0.5 * xi.squaredNorm() - f(s.x) + s.log_jacobian;
  if (std::isnan(s.log_weight)) s.log_weight = -std::numeric_limits<double>::infinity();
  return s;
}

double log_mean_exp(std::span<const double> a) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : a) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;
  double sum = 0;
  for (double v : a) sum += std::exp(v - mx);
  return mx + std::log(sum / static_cast<double>(a.size()));
}

Vector normalize_log_weights(std::span<const double> log_weights) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : log_weights) {
    if (!std::isnan(v)) mx = std::max(mx, v);
  }
  if (!std::isfinite(mx)) throw DegenerateEnsemble("all weights vanish");
  Vector w(static_cast<Index>(log_weights.size()));
  for (std::size_t j = 0; j < log_weights.size(); ++j) {
    const double v = log_weights[j];
    w[static_cast<Index>(j)] = std::isnan(v) ? 0.0 : std::exp(v - mx);
  }
  return w / w.sum();
}

double ess(const Vector& weights) { return 1.0 / weights.squaredNorm(); }

std::vector<Index> resample_systematic(const Vector& weights, Rng& rng) {
  const Index m = weights.size();
  std::vector<Index> out(static_cast<std::size_t>(m));
  const double u = rng.uniform() / static_cast<double>(m);
  double cum = weights[0];
  Index j = 0;
  for (Index k = 0; k < m; ++k) {
    const double pos = u + static_cast<double>(k) / static_cast<double>(m);
    while (pos > cum && j < m - 1) cum += weights[++j];
    out[static_cast<std::size_t>(k)] = j;
  }
  return out;
}

std::vector<double> log_weights_of(const WeightedEnsemble& e) {
  std::vector<double> lw;
  lw.reserve(e.samples.size());
  for (const auto& s : e.samples) lw.push_back(s.log_weight);
  return lw;
}

namespace {

WeightedEnsemble finish(WeightedEnsemble e) {
  const std::vector<double> lw = log_weights_of(e);
  e.weights = normalize_log_weights(lw);
  e.ess = ess(e.weights);
  return e;
}

ImplicitSample draw_one(const Objective& f, const Preparation& prep, Vector xi, MapKind kind, Rng& rng,
                        WeightedEnsemble& e) {
  if (kind == MapKind::Quadratic) return sample_quadratic_map(f, prep, xi);
  for (int attempt = 0;; ++attempt) {
    try {
      return sample_random_map(f, prep, xi);
    } catch (const NoBracket&) {
    } catch (const NotConverged&) {
    }
    if (attempt >= kMaxRedraws) break;
    ++e.redraws;
    xi = rng.normal_vector(xi.size());
  }
  ++e.rejected;
  ImplicitSample s;
  s.xi = xi;
  s.x = prep.mu;
  s.log_weight = -std::numeric_limits<double>::infinity();
  return s;
}

}  // namespace

WeightedEnsemble sample_ensemble(const Objective& f, const Preparation& prep, int count, MapKind kind,
                                 std::uint64_t seed) {
  WeightedEnsemble e;
  e.samples.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(j));
    Vector xi = rng.normal_vector(prep.mu.size());
    e.samples.push_back(draw_one(f, prep, std::move(xi), kind, rng, e));
  }
  return finish(std::move(e));
}

WeightedEnsemble sample_ensemble(const Objective& f, const Preparation& prep,
                                 const std::vector<Vector>& xis, MapKind kind, std::uint64_t seed) {
  WeightedEnsemble e;
  e.samples.reserve(xis.size());
  for (std::size_t j = 0; j < xis.size(); ++j) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(j), 1);
    e.samples.push_back(draw_one(f, prep, xis[j], kind, rng, e));
  }
  return finish(std::move(e));
}

}  // namespace imps
