#include "imps/control_problems.hpp"

#include <cmath>
#include <limits>

#include "imps/errors.hpp"

namespace imps {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

int grid_steps(double span, double dt) { return static_cast<int>(std::lround(span / dt)); }

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI); }

// Phi(hi) - Phi(lo) without cancellation in either tail
double normal_mass(double lo, double hi) {
  const double s = 1 / std::sqrt(2.0);
  if (lo >= 0) return 0.5 * (std::erfc(lo * s) - std::erfc(hi * s));
  if (hi <= 0) return 0.5 * (std::erfc(-hi * s) - std::erfc(-lo * s));
  return 1 - 0.5 * std::erfc(-lo * s) - 0.5 * std::erfc(hi * s);
}

}  // namespace

int DoubleSlitSpec::steps() const { return grid_steps(t_f, dt); }

void DoubleSlitSpec::validate() const {
  if (!(a < b && b < c && c < d)) throw ConfigError("double slit: need a < b < c < d");
  if (!(0 < t1 && t1 < t_f)) throw ConfigError("double slit: need 0 < t1 < t_f");
  if (!(sigma > 0 && r > 0 && dt > 0)) throw ConfigError("double slit: sigma, r, dt must be positive");
}

double double_slit_potential(double x, double t, const DoubleSlitSpec& spec) {
  if (std::abs(t - spec.t1) <= 0.5 * spec.dt + 1e-12 && !spec.in_slit(x)) return kInf;
  return 0;
}

ControlProblem double_slit_problem(const DoubleSlitSpec& spec) {
  spec.validate();
  ControlProblem p;
  p.state_dim = 1;
  p.control_dim = 1;
  p.drift = [](const Vector&, double) { return Vector(Vector::Zero(1)); };
  p.drift_jacobian = [](const Vector&, double) { return Matrix(Matrix::Zero(1, 1)); };
  p.drift_is_affine = true;
  p.G = Matrix::Identity(1, 1);
  p.Q = Matrix::Constant(1, 1, std::sqrt(spec.sigma));
  p.R = Matrix::Constant(1, 1, spec.r);
  p.gamma = spec.gamma();
  p.potential = [spec](const Vector& y, double t) { return double_slit_potential(y[0], t, spec); };
  p.final_cost = [](const Vector& y) { return 0.5 * y[0] * y[0]; };
  p.final_cost_gradient = [](const Vector& y) { return y; };
  p.final_cost_hessian = [](const Vector&) { return Matrix(Matrix::Identity(1, 1)); };
  p.check_condition();
  return p;
}

SlitSolution double_slit_analytic(double x, double t, const DoubleSlitSpec& spec) {
  const double g = spec.gamma();
  const double sg = spec.sigma;
  SlitSolution out;
  if (t >= spec.t1 - 0.5 * spec.dt) {
    // Gaussian convolution of exp(-y^2/(2 gamma)) with N(x, sigma s)
    const double v = sg * (spec.t_f - t) + g;
    out.log_psi = 0.5 * std::log(g / v) - x * x / (2 * v);
    out.u = -sg * x / v;
    return out;
  }
  // Walk to the wall with variance v, then the post-wall solution S.
  const double big_s = sg * (spec.t_f - spec.t1) + g;
  const double v = sg * (spec.t1 - t);
  const double prec = 1 / v + 1 / big_s;
  const double m = (x / v) / prec;
  const double dm = (1 / v) / prec;
  const double sp = std::sqrt(prec);
  double mass = 0, dmass = 0;
  for (auto [lo, hi] : {std::pair{spec.a, spec.b}, std::pair{spec.c, spec.d}}) {
    const double zl = sp * (lo - m), zh = sp * (hi - m);
    mass += normal_mass(zl, zh);
    dmass += (normal_pdf(zl) - normal_pdf(zh)) * sp * dm;
  }
  out.log_psi = 0.5 * std::log(g / big_s) - 0.5 * std::log(v * prec) - x * x / (2 * (v + big_s)) + std::log(mass);
  out.u = sg * (-x / (v + big_s) + dmass / mass);
  return out;
}

PreWallEstimate double_slit_sample_pre_wall(const DoubleSlitSpec& spec, double x, double t,
                                            const std::vector<Vector>& draws, bool keep_paths) {
  const int n = grid_steps(spec.t_f - t, spec.dt);
  const int k = grid_steps(spec.t1 - t, spec.dt);
  if (k < 1) throw std::invalid_argument("double_slit_sample_pre_wall: time is not before the wall");
  ControlProblem free = double_slit_problem(spec);
  free.potential = nullptr;
  const PathDiscretization disc{spec.dt, n, t};
  const Objective f = path_objective(free, Vector::Constant(1, x), disc);

  const auto left = constrained_quadratic_minimize(f, k - 1, Interval{spec.a, spec.b});
  const auto right = constrained_quadratic_minimize(f, k - 1, Interval{spec.c, spec.d});
  const bool use_right = right.minimum < left.minimum;
  const auto& best = use_right ? right : left;
  const Preparation prep = laplace(best.minimizer, best.minimum, best.hessian);

  PreWallEstimate est;
  est.phi = prep.phi;
  est.slit = use_right ? 1 : 0;
  int accepted = 0;
  for (const Vector& xi : draws) {
    const Vector z = prep.mu + prep.L.transpose().triangularView<Eigen::Upper>().solve(xi);
    if (spec.in_slit(z[k - 1])) ++accepted;
    if (keep_paths) {
      std::vector<double> path(static_cast<std::size_t>(n + 1));
      path[0] = x;
      for (int i = 0; i < n; ++i) path[static_cast<std::size_t>(i + 1)] = z[i];
      est.paths.push_back(std::move(path));
    }
  }
  if (accepted == 0) throw DegenerateEnsemble("double slit: no guided path clears the wall");
  est.accepted_fraction = static_cast<double>(accepted) / static_cast<double>(draws.size());
  est.log_psi = -prep.phi - prep.log_det_L + std::log(est.accepted_fraction);
  return est;
}

PreWallEstimate double_slit_sample_pre_wall(const DoubleSlitSpec& spec, double x, double t, int count,
                                            std::uint64_t seed, bool keep_paths) {
  const int n = grid_steps(spec.t_f - t, spec.dt);
  return double_slit_sample_pre_wall(spec, x, t, reference_draws(n, count, seed), keep_paths);
}

double double_slit_control(const DoubleSlitSpec& spec, double x, double t, int count, std::uint64_t seed) {
  const int n = grid_steps(spec.t_f - t, spec.dt);
  const double h = 1e-3 * (1 + std::abs(x));
  if (grid_steps(spec.t1 - t, spec.dt) >= 1) {
    const std::vector<Vector> draws = reference_draws(n, count, seed);
    const double lp = double_slit_sample_pre_wall(spec, x + h, t, draws).log_psi;
    const double lm = double_slit_sample_pre_wall(spec, x - h, t, draws).log_psi;
    return spec.sigma * (lp - lm) / (2 * h);
  }
  ControlProblem after = double_slit_problem(spec);
  after.potential = nullptr;
  ControlOptions o;
  o.psi.method = PsiMethod::SemiAnalytic;
  o.fd_step = h;
  return optimal_control(after, Vector::Constant(1, x), PathDiscretization{spec.dt, n, t}, o)[0];
}

double unguided_wall_fraction(const DoubleSlitSpec& spec, int walks, std::uint64_t seed) {
  const int k = grid_steps(spec.t1, spec.dt);
  int hits = 0;
  for (int j = 0; j < walks; ++j) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(j));
    double y = spec.x0;
    for (int i = 0; i < k; ++i) y += std::sqrt(spec.sigma * spec.dt) * rng.normal();
    if (!spec.in_slit(y)) ++hits;
  }
  return static_cast<double>(hits) / walks;
}

namespace {

double stacked_relative_error(const std::vector<Vector>& num, const std::vector<Vector>& ref) {
  double d = 0, s = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    d += (num[i] - ref[i]).squaredNorm();
    s += ref[i].squaredNorm();
  }
  return std::sqrt(d / s);
}

}  // namespace

DoubleSlitRun double_slit_run(const DoubleSlitSpec& spec, int count, std::uint64_t seed) {
  const ControlProblem p = double_slit_problem(spec);
  const PathDiscretization disc{spec.dt, spec.steps(), 0};
  const std::uint64_t noise_seed = mix_seed(seed ^ 0x6e6f697365ULL);
  const Vector x0 = Vector::Constant(1, spec.x0);
  DoubleSlitRun run;
  run.analytic = simulate(
      p, x0, disc,
      [&](const Vector& x, int k) { return Vector(Vector::Constant(1, double_slit_analytic(x[0], disc.time(k), spec).u)); },
      noise_seed);
  run.numeric = simulate(
      p, x0, disc,
      [&](const Vector& x, int k) {
        const std::uint64_t s = Rng::stream(seed, static_cast<std::uint64_t>(k)).next();
        return Vector(Vector::Constant(1, double_slit_control(spec, x[0], disc.time(k), count, s)));
      },
      noise_seed);
  run.x_error = stacked_relative_error(run.numeric.x, run.analytic.x);
  run.u_error = stacked_relative_error(run.numeric.u, run.analytic.u);
  return run;
}

// ---------------------------------------------------------------------------

int ArmSpec::steps() const { return grid_steps(t_f, dt); }

std::pair<Eigen::Matrix2d, Eigen::Matrix2d> arm_matrices(const Eigen::Vector2d& theta,
                                                         const Eigen::Vector2d& theta_dot,
                                                         const ArmParams& params) {
  const double a1 = params.a1(), a2 = params.a2(), a3 = params.a3();
  const double c = std::cos(theta[1]), s = std::sin(theta[1]);
  Eigen::Matrix2d m;
  m << a1 + 2 * a3 * c, a2 + a3 * c, a2 + a3 * c, a2;
  Eigen::Matrix2d cm;
  cm << -a3 * s * theta_dot[1], -a3 * (theta_dot[0] + theta_dot[1]) * s, a3 * s * theta_dot[0], 0;
  return {m, cm};
}

ControlProblem arm_control_problem(const ArmSpec& spec) {
  ControlProblem p;
  p.state_dim = 4;
  p.control_dim = 2;
  Matrix a = Matrix::Zero(4, 4);
  a.topRightCorner(2, 2).setIdentity();
  p.drift = [a](const Vector& x, double) { return Vector(a * x); };
  p.drift_jacobian = [a](const Vector&, double) { return a; };
  p.drift_is_affine = true;
  p.G = Matrix::Zero(4, 2);
  p.G.bottomRows(2).setIdentity();
  p.Q = Matrix::Identity(2, 2);
  p.R = spec.r * Matrix::Identity(2, 2);
  p.gamma = spec.r;
  Vector target = Vector::Zero(4);
  target.head(2) = spec.target;
  p.final_cost = [target](const Vector& x) { return 0.5 * (x - target).squaredNorm(); };
  p.final_cost_gradient = [target](const Vector& x) { return Vector(x - target); };
  p.final_cost_hessian = [](const Vector&) { return Matrix(Matrix::Identity(4, 4)); };
  p.check_condition();
  return p;
}

ArmRun arm_closed_loop(const ArmSpec& spec, const Eigen::Vector4d& x0, std::uint64_t seed, bool noise) {
  const ControlProblem p = arm_control_problem(spec);
  const int steps = spec.steps();
  Rng rng(seed);
  ControlOptions o;
  o.psi.method = PsiMethod::SemiAnalytic;
  ArmRun run;
  Eigen::Vector4d x = x0;
  run.t.push_back(0);
  run.x.push_back(x);
  const double h = spec.dt / spec.substeps;
  for (int k = 0; k < steps; ++k) {
    const PathDiscretization rest{spec.dt, steps - k, k * spec.dt};
    const Vector u = optimal_control(p, Vector(x), rest, o);
    const auto [mc, cc] = arm_matrices(x.head<2>(), x.tail<2>(), spec.controller);
    const Eigen::Vector2d tau = cc * x.tail<2>() + mc * Eigen::Vector2d(u);
    for (int s = 0; s < spec.substeps; ++s) {
      const auto [mt, ct] = arm_matrices(x.head<2>(), x.tail<2>(), spec.plant);
      const Eigen::Vector2d acc = mt.ldlt().solve(tau - ct * x.tail<2>());
      Eigen::Vector2d vel = x.tail<2>() + h * acc;
      if (noise) vel += spec.plant_noise * std::sqrt(h) * Eigen::Vector2d(rng.normal(), rng.normal());
      x.head<2>() += h * x.tail<2>();
      x.tail<2>() = vel;
    }
    run.u.push_back(Eigen::Vector2d(u));
    run.tau.push_back(tau);
    run.t.push_back((k + 1) * spec.dt);
    run.x.push_back(x);
  }
  return run;
}

// ---------------------------------------------------------------------------

double himmelblau(double x1, double x2) {
  const double p = x1 * x1 + x2 - 11;
  const double q = x1 + x2 * x2 - 7;
  return p * p + q * q;
}

Vector himmelblau_gradient(const Vector& x) {
  const double p = x[0] * x[0] + x[1] - 11;
  const double q = x[0] + x[1] * x[1] - 7;
  Vector g(2);
  g << 4 * x[0] * p + 2 * q, 2 * p + 4 * x[1] * q;
  return g;
}

Matrix himmelblau_hessian(const Vector& x) {
  const double p = x[0] * x[0] + x[1] - 11;
  const double q = x[0] + x[1] * x[1] - 7;
  Matrix h(2, 2);
  h << 4 * p + 8 * x[0] * x[0] + 2, 4 * x[0] + 4 * x[1], 4 * x[0] + 4 * x[1], 2 + 4 * q + 8 * x[1] * x[1];
  return h;
}

int StochOptSpec::steps() const { return grid_steps(t_f, dt); }

ControlProblem himmelblau_problem(const StochOptSpec& spec) {
  ControlProblem p;
  p.state_dim = 2;
  p.control_dim = 2;
  p.drift = [](const Vector&, double) { return Vector(Vector::Zero(2)); };
  p.drift_jacobian = [](const Vector&, double) { return Matrix(Matrix::Zero(2, 2)); };
  p.drift_is_affine = true;
  p.G = Matrix::Identity(2, 2);
  p.Q = std::sqrt(spec.sigma) * Matrix::Identity(2, 2);
  p.R = spec.R * Matrix::Identity(2, 2);
  p.gamma = spec.gamma();
  p.final_cost = [](const Vector& x) { return himmelblau(x[0], x[1]); };
  p.final_cost_gradient = himmelblau_gradient;
  p.final_cost_hessian = himmelblau_hessian;
  p.check_condition();
  return p;
}

StochOptRun stochastic_optimize(const StochOptSpec& spec, std::uint64_t seed) {
  const ControlProblem p = himmelblau_problem(spec);
  const PathDiscretization disc{spec.dt, spec.steps(), 0};
  ControlOptions o;
  o.psi.method = spec.method;
  o.psi.samples = spec.samples;
  o.psi.seed = seed;
  const Trajectory tr = simulate_closed_loop(p, Vector(spec.x0), disc, o, mix_seed(seed ^ 0x6e6f697365ULL));
  StochOptRun run;
  run.iterates = tr.x;
  run.controls = tr.u;
  run.final_f = p.final_cost(tr.x.back());
  run.cost = run.final_f;
  for (const Vector& u : tr.u) run.cost += u.dot(p.R * u) * spec.dt;
  return run;
}

}  // namespace imps
