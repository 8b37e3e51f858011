#ifndef IMPS_SAMPLER_HPP
#define IMPS_SAMPLER_HPP

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "imps/numerics.hpp"
#include "imps/random.hpp"

namespace imps {

/// Minimizer, minimum and Cholesky factor of the Hessian at the minimizer.
struct Preparation {
  Vector mu;
  double phi = 0;
  Matrix L;
  double log_det_L = 0;
  int iterations = 0;
};

struct ImplicitSample {
  Vector x;
  Vector xi;
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double log_jacobian = 0;
  /// log of exp(-F(x)) / q(x), q the proposal density of x. Comparable across
  /// different objectives.
  double log_weight = 0;
};

enum class MapKind { Random, Quadratic };

inline NewtonOptions prepare_defaults() {
  NewtonOptions o;
  o.policy = HessianPolicy::Convexified;
  return o;
}

/// Laplace data at the minimum of F found by Newton from x0. Throws
/// NotConverged or NotPositiveDefinite.
Preparation prepare(const Objective& f, const Vector& x0, const NewtonOptions& options = prepare_defaults());

/// Laplace data from a known minimizer and Hessian.
Preparation laplace(Vector mu, double phi, const Matrix& hessian);

/// x = mu + lambda L^-T xi/|xi| with F(x) - phi = |xi|^2/2, lambda >= 0.
/// Throws NoBracket when the scalar equation has no root along the ray.
ImplicitSample sample_random_map(const Objective& f, const Preparation& prep, const Vector& xi);

/// x = mu + L^-T xi, weighted by the error of the quadratic model.
ImplicitSample sample_quadratic_map(const Objective& f, const Preparation& prep, const Vector& xi);

/// log|det dx/dxi| of the random map with dlambda/drho = 1/(2 grad F . L^-T eta)
/// at the sample. sample_random_map uses this form when f has an analytic
/// gradient and the difference form otherwise.
double random_map_log_jacobian_from_gradient(const Objective& f, const Preparation& prep,
                                             const ImplicitSample& s);
/// Same with dlambda/drho by a central difference in rho (step 1e-5 rho),
/// re-solving the scalar equation near lambda.
double random_map_log_jacobian_from_difference(const Objective& f, const Preparation& prep,
                                               const ImplicitSample& s);

/// Normalized weights (max-subtracted softmax). Throws DegenerateEnsemble if
/// no log-weight is finite.
Vector normalize_log_weights(std::span<const double> log_weights);

double ess(const Vector& weights);

/// Ancestor indices from systematic resampling.
std::vector<Index> resample_systematic(const Vector& weights, Rng& rng);

struct WeightedEnsemble {
  std::vector<ImplicitSample> samples;
  Vector weights;
  double ess = 0;
  int redraws = 0;
  int rejected = 0;
};

constexpr int kMaxRedraws = 10;

/// Draw M samples; sample j uses the stream (seed, j). A draw without a
/// bracket is redrawn up to kMaxRedraws times and then given weight zero.
WeightedEnsemble sample_ensemble(const Objective& f, const Preparation& prep, int count, MapKind kind,
                                 std::uint64_t seed);

/// Same, from precomputed reference draws (common random numbers).
WeightedEnsemble sample_ensemble(const Objective& f, const Preparation& prep,
                                 const std::vector<Vector>& xis, MapKind kind, std::uint64_t seed);

std::vector<double> log_weights_of(const WeightedEnsemble& e);

/// log((1/M) sum exp(a_j)) computed stably; -inf for an all -inf input.
double log_mean_exp(std::span<const double> a);

}  // namespace imps

#endif  // IMPS_SAMPLER_HPP
