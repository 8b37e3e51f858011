#ifndef IMPS_CONTROL_PROBLEMS_HPP
#define IMPS_CONTROL_PROBLEMS_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "imps/pic.hpp"

namespace imps {

// ---------------------------------------------------------------------------
// Double slit: dx = u dt + sqrt(sigma) dW, final cost x^2/2 and a wall at t1
// with openings [a,b] and [c,d].

struct DoubleSlitSpec {
  double t_f = 2;
  double t1 = 1;
  double a = -6, b = -4, c = 6, d = 8;
  double x0 = 1;
  double sigma = 1;
  double r = 0.1;
  double dt = 0.02;

  /// gamma G R^-1 G^T = sigma requires gamma = r sigma.
  double gamma() const { return r * sigma; }
  int steps() const;
  bool in_slit(double x) const { return (a <= x && x <= b) || (c <= x && x <= d); }
  void validate() const;
};

/// +infinity on the wall (grid time nearest t1, outside the slits), else 0.
double double_slit_potential(double x, double t, const DoubleSlitSpec& spec);

/// The control problem with the wall as its potential.
ControlProblem double_slit_problem(const DoubleSlitSpec& spec);

struct SlitSolution {
  double log_psi = 0;
  double u = 0;
};

/// Closed-form psi (log) and optimal control.
SlitSolution double_slit_analytic(double x, double t, const DoubleSlitSpec& spec);

struct PreWallEstimate {
  double log_psi = 0;
  double phi = 0;
  double accepted_fraction = 0;
  int slit = 0;  // 0: [a,b], 1: [c,d]
  /// Guided paths, n + 1 states each (starting at x).
  std::vector<std::vector<double>> paths;
};

/// Samples about the lower of the two constrained minima (one per slit);
/// log psi = -phi - log det L + log(fraction of paths clearing the wall).
PreWallEstimate double_slit_sample_pre_wall(const DoubleSlitSpec& spec, double x, double t,
                                            const std::vector<Vector>& draws, bool keep_paths = false);
PreWallEstimate double_slit_sample_pre_wall(const DoubleSlitSpec& spec, double x, double t, int count,
                                            std::uint64_t seed, bool keep_paths = false);

/// Numerical optimal control at (x, t): sampling before the wall, the
/// deterministic quadratic estimate after it.
double double_slit_control(const DoubleSlitSpec& spec, double x, double t, int count, std::uint64_t seed);

/// Fraction of uncontrolled walks from x0 at t = 0 that meet the wall.
double unguided_wall_fraction(const DoubleSlitSpec& spec, int walks, std::uint64_t seed);

struct DoubleSlitRun {
  Trajectory analytic;
  Trajectory numeric;
  double x_error = 0;  // |x_num - x_ana| / |x_ana| over the whole trajectory
  double u_error = 0;
};

/// Closed loop under the analytic and the numerical control with the same
/// noise realization.
DoubleSlitRun double_slit_run(const DoubleSlitSpec& spec, int count, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Two-link arm under an inverse-dynamics controller.

struct ArmParams {
  double l1 = 1, lc1 = 0.5, lc2 = 0.5;
  double m1 = 1, m2 = 1;
  double I1 = 2, I2 = 2;

  double a1() const { return m1 * lc1 * lc1 + m2 * lc1 * lc1 + m2 * lc2 * lc2 + I1 + I2; }
  double a2() const { return m2 * lc2 * lc2 + I2; }
  double a3() const { return l1 * m2 * lc2; }
};

struct ArmSpec {
  ArmParams plant;
  ArmParams controller;
  Eigen::Vector2d target{0.8, -0.6};
  double r = 1e-3;
  double t_f = 1;
  double dt = 0.02;
  int substeps = 10;
  /// Standard deviation rate of the angular-acceleration noise in the plant.
  double plant_noise = 0.01;

  int steps() const;
};

std::pair<Eigen::Matrix2d, Eigen::Matrix2d> arm_matrices(const Eigen::Vector2d& theta,
                                                         const Eigen::Vector2d& theta_dot,
                                                         const ArmParams& params);

/// Double integrator in (theta, theta_dot) with final cost
/// |theta - target|^2/2 + |theta_dot|^2/2 and gamma = r.
ControlProblem arm_control_problem(const ArmSpec& spec);

struct ArmRun {
  std::vector<double> t;
  std::vector<Eigen::Vector4d> x;  // (theta, theta_dot)
  std::vector<Eigen::Vector2d> u;
  std::vector<Eigen::Vector2d> tau;
};

ArmRun arm_closed_loop(const ArmSpec& spec, const Eigen::Vector4d& x0, std::uint64_t seed, bool noise = true);

// ---------------------------------------------------------------------------
// Optimization via stochastic control: dx = u dt + sqrt(sigma) dW with final
// cost f.

double himmelblau(double x1, double x2);
Vector himmelblau_gradient(const Vector& x);
Matrix himmelblau_hessian(const Vector& x);

struct StochOptSpec {
  double R = 0.01;
  double sigma = 0.01;
  double dt = 1;
  double t_f = 20;
  Eigen::Vector2d x0{-1, -4};
  int samples = 50;
  PsiMethod method = PsiMethod::RandomMap;

  /// gamma R^-1 = sigma.
  double gamma() const { return sigma * R; }
  int steps() const;
};

ControlProblem himmelblau_problem(const StochOptSpec& spec);

struct StochOptRun {
  std::vector<Vector> iterates;
  std::vector<Vector> controls;
  double final_f = 0;
  /// f(x(t_f)) + sum u^T R u dt
  double cost = 0;
};

StochOptRun stochastic_optimize(const StochOptSpec& spec, std::uint64_t seed);

}  // namespace imps

#endif  // IMPS_CONTROL_PROBLEMS_HPP
