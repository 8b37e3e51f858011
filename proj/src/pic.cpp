#include "imps/pic.hpp"

#include <cmath>
#include <memory>
#include <sstream>

#include "imps/errors.hpp"

namespace imps {

std::vector<Index> ControlProblem::noise_driven() const {
  const Matrix s = sigma();
  std::vector<Index> idx;
  for (Index i = 0; i < state_dim; ++i) {
    if (s(i, i) > 0) idx.push_back(i);
  }
  return idx;
}

void ControlProblem::check_condition() const {
  if (G.rows() != state_dim || G.cols() != control_dim || R.rows() != control_dim ||
      R.cols() != control_dim || Q.rows() != control_dim) {
    throw ConfigError("control problem: inconsistent matrix shapes");
  }
  Eigen::LLT<Matrix> llt(R);
  if (llt.info() != Eigen::Success || norm_inf(R - R.transpose()) > 1e-12 * norm_inf(R)) {
    throw ConditionViolated("control cost R is not symmetric positive definite");
  }
  const Matrix lhs = gamma * G * llt.solve(G.transpose());
  const Matrix rhs = sigma();
  if (norm_inf(lhs - rhs) >= 1e-8 * norm_inf(rhs)) {
    std::ostringstream os;
    os << "gamma G R^-1 G^T =\n" << lhs << "\ndiffers from G Q Q^T G^T =\n" << rhs;
    throw ConditionViolated(os.str());
  }
}

namespace {

Matrix drift_jacobian_at(const ControlProblem& p, const Vector& y, double t) {
  if (p.drift_jacobian) return p.drift_jacobian(y, t);
  return finite_diff_jacobian<double>([&](const Vector& v) { return p.drift(v, t); }, y, 1e-6);
}

struct PathContext {
  ControlProblem problem;
  Vector x;
  PathDiscretization disc;
  PotentialMode mode = PotentialMode::Penalty;
  std::vector<Index> free;
  std::vector<Index> det;
  Matrix S;  // inverse noise covariance on the free coordinates

  PathContext(const ControlProblem& p, const Vector& x0, const PathDiscretization& d, PotentialMode m)
      : problem(p), x(x0), disc(d), mode(m) {
    problem.check_condition();
    if (!(disc.dt > 0) || disc.steps < 1) throw ConfigError("path discretization: need dt > 0 and steps >= 1");
    free = problem.noise_driven();
    std::vector<bool> is_free(static_cast<std::size_t>(problem.state_dim), false);
    for (Index i : free) is_free[static_cast<std::size_t>(i)] = true;
    for (Index i = 0; i < problem.state_dim; ++i) {
      if (!is_free[static_cast<std::size_t>(i)]) det.push_back(i);
    }
    const Matrix s = problem.sigma()(free, free);
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) throw ConditionViolated("noise covariance is singular on its support");
    S = llt.solve(Matrix::Identity(s.rows(), s.cols()));
  }

  Index q() const { return static_cast<Index>(free.size()); }

  std::vector<Vector> states(const Vector& z) const {
    std::vector<Vector> y(static_cast<std::size_t>(disc.steps + 1));
    y[0] = x;
    for (int i = 1; i <= disc.steps; ++i) {
      const Vector& prev = y[static_cast<std::size_t>(i - 1)];
      Vector cur(problem.state_dim);
      if (!det.empty()) {
        const Vector f = problem.drift(prev, disc.time(i - 1));
        cur(det) = prev(det) + disc.dt * f(det);
      }
      cur(free) = z.segment((i - 1) * q(), q());
      y[static_cast<std::size_t>(i)] = std::move(cur);
    }
    return y;
  }

  double potential(const Vector& y, double t) const {
    if (!problem.potential) return 0;
    const double v = problem.potential(y, t);
    if (mode == PotentialMode::Penalty && std::isinf(v) && v > 0) return kWallPenalty;
    return v;
  }

  double cost_terms(const std::vector<Vector>& y) const {
    const double g = problem.gamma;
    double total = problem.final_cost(y.back()) / g;
    if (problem.potential) {
      double trap = 0;
      for (int i = 1; i <= disc.steps; ++i) {
        trap += potential(y[static_cast<std::size_t>(i)], disc.time(i)) +
                potential(y[static_cast<std::size_t>(i - 1)], disc.time(i - 1));
      }
      total += disc.dt / (2 * g) * trap;
    }
    return total;
  }

  double value(const Vector& z) const {
    const std::vector<Vector> y = states(z);
    double quad = 0;
    for (int i = 1; i <= disc.steps; ++i) {
      const Vector& prev = y[static_cast<std::size_t>(i - 1)];
      const Vector f = problem.drift(prev, disc.time(i - 1));
      const Vector r = (y[static_cast<std::size_t>(i)](free) - prev(free)) / disc.dt - f(free);
      quad += 0.5 * disc.dt * r.dot(S * r);
    }
    return cost_terms(y) + quad;
  }

  Vector gradient(const Vector& z) const {
    const std::vector<Vector> y = states(z);
    const int n = disc.steps;
    const double dt = disc.dt;
    const double g = problem.gamma;
    std::vector<Vector> e(static_cast<std::size_t>(n + 2));
    for (int i = 1; i <= n; ++i) {
      const Vector& prev = y[static_cast<std::size_t>(i - 1)];
      const Vector f = problem.drift(prev, disc.time(i - 1));
      const Vector r = (y[static_cast<std::size_t>(i)](free) - prev(free)) / dt - f(free);
      e[static_cast<std::size_t>(i)] = dt * (S * r);
    }
    Vector grad(n * q());
    Vector dbar_next;
    for (int i = n; i >= 1; --i) {
      const Vector& yi = y[static_cast<std::size_t>(i)];
      Vector ybar = Vector::Zero(problem.state_dim);
      if (i == n) {
        ybar += (problem.final_cost_gradient
                     ? problem.final_cost_gradient(yi)
                     : finite_diff_gradient<double>(problem.final_cost, yi, 1e-6)) /
                g;
      }
      if (problem.potential_gradient) {
        const double w = (i == n ? 1.0 : 2.0) * dt / (2 * g);
        ybar += w * problem.potential_gradient(yi, disc.time(i));
      }
      ybar(free) += e[static_cast<std::size_t>(i)] / dt;
      if (i < n) {
        const Vector& en = e[static_cast<std::size_t>(i + 1)];
        ybar(free) -= en / dt;
        Vector c = Vector::Zero(problem.state_dim);
        c(free) = -en;
        if (!det.empty()) {
          ybar(det) += dbar_next;
          c(det) = dt * dbar_next;
        }
        ybar += drift_jacobian_at(problem, yi, disc.time(i)).transpose() * c;
      }
      grad.segment((i - 1) * q(), q()) = ybar(free);
      if (!det.empty()) dbar_next = ybar(det);
    }
    return grad;
  }

  Matrix final_hessian(const Vector& y) const {
    if (problem.final_cost_hessian) return problem.final_cost_hessian(y);
    if (problem.final_cost_gradient) {
      const Matrix j = finite_diff_jacobian<double>(problem.final_cost_gradient, y, 1e-6);
      return 0.5 * (j + j.transpose());
    }
    return finite_diff_hessian<double>(problem.final_cost, y, 1e-4);
  }

  // Exact for affine drift: sensitivities of every state to the free path.
  // Before step i only the first i*q columns are non-zero.
  Matrix hessian(const Vector& z) const {
    using Eigen::all;
    const std::vector<Vector> y = states(z);
    const int n = disc.steps;
    const double dt = disc.dt;
    const Index dim = n * q();
    const Index m = problem.state_dim;
    Matrix h = Matrix::Zero(dim, dim);
    Matrix jprev = Matrix::Zero(m, dim);
    for (int i = 1; i <= n; ++i) {
      const Index c = i * q();
      const Matrix a = drift_jacobian_at(problem, y[static_cast<std::size_t>(i - 1)], disc.time(i - 1));
      const Matrix aj = a * jprev.leftCols(c);
      Matrix jcur = Matrix::Zero(m, dim);
      if (!det.empty()) jcur(det, Eigen::seqN(0, c)) = jprev(det, Eigen::seqN(0, c)) + dt * aj(det, all);
      for (Index k = 0; k < q(); ++k) jcur(free[static_cast<std::size_t>(k)], (i - 1) * q() + k) = 1;
      const Matrix jr = (jcur(free, Eigen::seqN(0, c)) - jprev(free, Eigen::seqN(0, c))) / dt - aj(free, all);
      h.topLeftCorner(c, c).noalias() += dt * jr.transpose() * S * jr;
      if (problem.potential_hessian) {
        const double w = (i == n ? 1.0 : 2.0) * dt / (2 * problem.gamma);
        const Matrix v = problem.potential_hessian(y[static_cast<std::size_t>(i)], disc.time(i));
        h.topLeftCorner(c, c).noalias() += w * jcur.leftCols(c).transpose() * v * jcur.leftCols(c);
      }
      jprev = std::move(jcur);
    }
    h.noalias() += jprev.transpose() * final_hessian(y.back()) * jprev / problem.gamma;
    return 0.5 * (h + h.transpose());
  }
};

Preparation default_prepare(const Objective& f, const Vector& start) {
  NewtonOptions opt = prepare_defaults();
  MinimizeResult<double> r = newton_minimize(f, start, opt);
  if (!r.converged && !(f.gradient(r.minimizer).norm() <= 1e-6 * (1 + std::abs(r.minimum)))) {
    throw NotConverged("path objective: Newton did not converge");
  }
  Preparation p = laplace(std::move(r.minimizer), r.minimum, r.hessian);
  p.iterations = r.iterations;
  return p;
}

}  // namespace

Objective path_objective(const ControlProblem& problem, const Vector& x, const PathDiscretization& disc,
                         PotentialMode mode) {
  auto ctx = std::make_shared<const PathContext>(problem, x, disc, mode);
  Objective::HessianFn hess;
  if (problem.drift_is_affine) hess = [ctx](const Vector& z) { return ctx->hessian(z); };
  return Objective(
      disc.steps * ctx->q(), [ctx](const Vector& z) { return ctx->value(z); },
      [ctx](const Vector& z) { return ctx->gradient(z); }, std::move(hess));
}

std::vector<Vector> path_states(const ControlProblem& problem, const Vector& x, const PathDiscretization& disc,
                                const Vector& free_path) {
  return PathContext(problem, x, disc, PotentialMode::Exact).states(free_path);
}

Vector drift_path(const ControlProblem& problem, const Vector& x, const PathDiscretization& disc) {
  const std::vector<Index> free = problem.noise_driven();
  const Index q = static_cast<Index>(free.size());
  Vector z(disc.steps * q);
  Vector y = x;
  for (int i = 1; i <= disc.steps; ++i) {
    y = y + disc.dt * problem.drift(y, disc.time(i - 1));
    z.segment((i - 1) * q, q) = y(free);
  }
  return z;
}

double path_cost_G(const ControlProblem& problem, const std::vector<Vector>& states,
                   const PathDiscretization& disc) {
  if (static_cast<int>(states.size()) != disc.steps + 1) {
    throw std::invalid_argument("path_cost_G: expected steps + 1 states");
  }
  double total = problem.final_cost(states.back()) / problem.gamma;
  if (problem.potential) {
    double trap = 0;
    for (int i = 1; i <= disc.steps; ++i) {
      trap += problem.potential(states[static_cast<std::size_t>(i)], disc.time(i)) +
              problem.potential(states[static_cast<std::size_t>(i - 1)], disc.time(i - 1));
    }
    total += disc.dt / (2 * problem.gamma) * trap;
  }
  return total;
}

std::vector<Vector> reference_draws(Index dim, int count, std::uint64_t seed) {
  std::vector<Vector> xis;
  xis.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(j));
    xis.push_back(rng.normal_vector(dim));
  }
  return xis;
}

PsiEstimate estimate_psi(const ControlProblem& problem, const Vector& x, const PathDiscretization& disc,
                         const PsiOptions& options, const std::vector<Vector>* draws,
                         const Vector* warm_start) {
  const Objective f_opt = path_objective(problem, x, disc, PotentialMode::Penalty);
  const Vector start = warm_start ? *warm_start : drift_path(problem, x, disc);
  PsiEstimate est;
  est.prep = options.preparer ? options.preparer(f_opt, start) : default_prepare(f_opt, start);
  est.phi = est.prep.phi;
  if (options.method == PsiMethod::SemiAnalytic) {
    est.log_psi = -est.prep.phi - est.prep.log_det_L;
    return est;
  }
  std::vector<Vector> own;
  if (!draws) {
    own = reference_draws(f_opt.dimension(), options.samples, options.seed);
    draws = &own;
  }
  const Objective f_w = options.exact_potential_weights && problem.potential
                            ? path_objective(problem, x, disc, PotentialMode::Exact)
                            : f_opt;
  const MapKind kind = options.method == PsiMethod::RandomMap ? MapKind::Random : MapKind::Quadratic;
  WeightedEnsemble e = sample_ensemble(f_w, est.prep, *draws, kind, options.seed);
  const std::vector<double> lw = log_weights_of(e);
  est.log_psi = log_mean_exp(lw);
  for (double v : lw) {
    if (std::isfinite(v)) ++est.samples_used;
  }
  est.samples = std::move(e.samples);
  return est;
}

Vector cost_to_go_gradient(const ControlProblem& problem, const Vector& x, const PathDiscretization& disc,
                           const ControlOptions& options) {
  const double h = options.fd_step > 0 ? options.fd_step : 1e-3 * (1 + x.lpNorm<Eigen::Infinity>());
  std::vector<Vector> draws;
  if (options.psi.method != PsiMethod::SemiAnalytic) {
    const Index dim = disc.steps * static_cast<Index>(problem.noise_driven().size());
    draws = reference_draws(dim, options.psi.samples, options.psi.seed);
  }
  const PsiEstimate center = estimate_psi(problem, x, disc, options.psi, &draws);
  Vector grad = Vector::Zero(problem.state_dim);
  for (Index i = 0; i < problem.state_dim; ++i) {
    if (problem.G.row(i).squaredNorm() == 0) continue;  // does not reach u
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double lp = estimate_psi(problem, xp, disc, options.psi, &draws, &center.prep.mu).log_psi;
    const double lm = estimate_psi(problem, xm, disc, options.psi, &draws, &center.prep.mu).log_psi;
    grad[i] = -problem.gamma * (lp - lm) / (2 * h);
  }
  return grad;
}

Vector optimal_control(const ControlProblem& problem, const Vector& x, const PathDiscretization& disc,
                       const ControlOptions& options) {
  const Vector dj = cost_to_go_gradient(problem, x, disc, options);
  return -problem.R.llt().solve(problem.G.transpose() * dj);
}

Trajectory simulate(const ControlProblem& problem, const Vector& x0, const PathDiscretization& disc,
                    const ControlLaw& law, std::uint64_t noise_seed, bool noise) {
  Trajectory tr;
  Rng rng(noise_seed);
  const Matrix gq = problem.G * problem.Q;
  Vector x = x0;
  tr.t.push_back(disc.start_time);
  tr.x.push_back(x);
  for (int k = 0; k < disc.steps; ++k) {
    const double t = disc.time(k);
    const Vector u = law(x, k);
    Vector next = x + disc.dt * (problem.drift(x, t) + problem.G * u);
    if (noise) next += std::sqrt(disc.dt) * (gq * rng.normal_vector(gq.cols()));
    x = std::move(next);
    tr.u.push_back(u);
    tr.t.push_back(disc.time(k + 1));
    tr.x.push_back(x);
  }
  return tr;
}

Trajectory simulate_closed_loop(const ControlProblem& problem, const Vector& x0,
                                const PathDiscretization& disc, const ControlOptions& options,
                                std::uint64_t noise_seed, bool noise) {
  auto law = [&](const Vector& x, int k) {
    const PathDiscretization rest{disc.dt, disc.steps - k, disc.time(k)};
    ControlOptions o = options;
    o.psi.seed = mix_seed(options.psi.seed ^ mix_seed(static_cast<std::uint64_t>(k)));
    return optimal_control(problem, x, rest, o);
  };
  return simulate(problem, x0, disc, law, noise_seed, noise);
}

}  // namespace imps
