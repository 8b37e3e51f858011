#ifndef IMPS_PIC_HPP
#define IMPS_PIC_HPP

// Path-integral control: the discretized Feynman-Kac path objective, psi
// estimates by implicit sampling, and the optimal feedback control
// u = -R^-1 G^T dJ/dx with J = -gamma log psi.

#include <cstdint>
#include <functional>
#include <vector>

#include "imps/numerics.hpp"
#include "imps/sampler.hpp"

namespace imps {

/// Penalty standing in for an infinite potential inside optimization-facing
/// objectives.
constexpr double kWallPenalty = 1e12;

struct ControlProblem {
  Index state_dim = 0;
  Index control_dim = 0;
  std::function<Vector(const Vector&, double)> drift;
  /// Optional; central differences of `drift` otherwise.
  std::function<Matrix(const Vector&, double)> drift_jacobian;
  /// Affine drift: the path Hessian is assembled exactly from first
  /// derivatives instead of differencing the gradient.
  bool drift_is_affine = false;
  Matrix G;  // m x p
  Matrix Q;  // p x r
  Matrix R;  // p x p
  /// Optional; zero when absent. May return +infinity.
  std::function<double(const Vector&, double)> potential;
  /// Optional; zero when absent (piecewise constant potentials).
  std::function<Vector(const Vector&, double)> potential_gradient;
  /// Optional; zero when absent.
  std::function<Matrix(const Vector&, double)> potential_hessian;
  std::function<double(const Vector&)> final_cost;
  /// Optional; central differences of `final_cost` otherwise.
  std::function<Vector(const Vector&)> final_cost_gradient;
  /// Optional; central differences of the gradient otherwise.
  std::function<Matrix(const Vector&)> final_cost_hessian;
  double gamma = 1;

  Matrix sigma() const { return G * Q * Q.transpose() * G.transpose(); }
  /// Indices with a positive diagonal entry of sigma.
  std::vector<Index> noise_driven() const;
  /// Throws ConditionViolated unless gamma G R^-1 G^T = G Q Q^T G^T.
  void check_condition() const;
};

struct PathDiscretization {
  double dt = 0;
  int steps = 0;
  double start_time = 0;

  double time(int i) const { return start_time + i * dt; }
};

enum class PotentialMode { Penalty, Exact };

/// F over the stacked noise-driven coordinates of y_1..y_n (y_0 = x fixed).
Objective path_objective(const ControlProblem& problem, const Vector& x, const PathDiscretization& disc,
                         PotentialMode mode = PotentialMode::Penalty);

/// Full states y_0..y_n of the path with free coordinates `free_path`.
std::vector<Vector> path_states(const ControlProblem& problem, const Vector& x,
                                const PathDiscretization& disc, const Vector& free_path);

/// Free coordinates of the noiseless (drift-only) path; the default Newton start.
Vector drift_path(const ControlProblem& problem, const Vector& x, const PathDiscretization& disc);

/// Phi(y_n)/gamma + trapezoidal potential; +infinity if the path meets an
/// infinite potential.
double path_cost_G(const ControlProblem& problem, const std::vector<Vector>& states,
                   const PathDiscretization& disc);

enum class PsiMethod { RandomMap, QuadraticMap, SemiAnalytic };

using Preparer = std::function<Preparation(const Objective&, const Vector& start)>;

struct PsiOptions {
  PsiMethod method = PsiMethod::QuadraticMap;
  int samples = 50;
  std::uint64_t seed = 0;
  /// Replaces the default Newton preparation (e.g. constrained minima).
  Preparer preparer;
  /// Objective the samples are weighted with; the penalty objective if false.
  bool exact_potential_weights = true;
};

struct PsiEstimate {
  double log_psi = 0;
  double phi = 0;
  int samples_used = 0;
  Preparation prep;
  std::vector<ImplicitSample> samples;
};

std::vector<Vector> reference_draws(Index dim, int count, std::uint64_t seed);

/// log psi up to an additive constant shared by all states at the same time.
PsiEstimate estimate_psi(const ControlProblem& problem, const Vector& x, const PathDiscretization& disc,
                         const PsiOptions& options, const std::vector<Vector>* draws = nullptr,
                         const Vector* warm_start = nullptr);

struct ControlOptions {
  PsiOptions psi;
  /// Central-difference step; 1e-3 (1 + |x|_inf) when <= 0.
  double fd_step = 0;
};

/// dJ/dx by central differences of -gamma log psi with common random numbers.
Vector cost_to_go_gradient(const ControlProblem& problem, const Vector& x, const PathDiscretization& disc,
                           const ControlOptions& options);

Vector optimal_control(const ControlProblem& problem, const Vector& x, const PathDiscretization& disc,
                       const ControlOptions& options);

struct Trajectory {
  std::vector<double> t;
  std::vector<Vector> x;
  std::vector<Vector> u;
};

using ControlLaw = std::function<Vector(const Vector& x, int step)>;

/// Forward Euler: x += (f + G u) dt + G Q sqrt(dt) N(0, I).
Trajectory simulate(const ControlProblem& problem, const Vector& x0, const PathDiscretization& disc,
                    const ControlLaw& law, std::uint64_t noise_seed, bool noise = true);

/// Re-plans with optimal_control at every step; step k uses sample seed
/// stream (options.psi.seed, k).
Trajectory simulate_closed_loop(const ControlProblem& problem, const Vector& x0,
                                const PathDiscretization& disc, const ControlOptions& options,
                                std::uint64_t noise_seed, bool noise = true);

}  // namespace imps

#endif  // IMPS_PIC_HPP
