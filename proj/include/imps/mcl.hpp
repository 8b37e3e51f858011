#ifndef IMPS_MCL_HPP
#define IMPS_MCL_HPP

// Monte Carlo localization on a known landmark map: implicit-sampling and
// bootstrap proposals.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "imps/filter_model.hpp"
#include "imps/sampler.hpp"

namespace imps {

struct Landmark {
  int id = 0;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
};

class LandmarkMap {
 public:
  LandmarkMap() = default;
  /// Throws ConfigError on duplicate ids.
  explicit LandmarkMap(std::vector<Landmark> landmarks);

  /// Throws UnknownLandmark.
  const Eigen::Vector2d& at(int id) const;
  const std::vector<Landmark>& landmarks() const { return landmarks_; }
  std::size_t size() const { return landmarks_.size(); }

 private:
  std::vector<Landmark> landmarks_;
};

/// One range/bearing return; id is -1 when the landmark identity is hidden.
struct Observation {
  int id = -1;
  Eigen::Vector2d z = Eigen::Vector2d::Zero();
};

struct Particle {
  Vector pose;
  double log_weight = 0;
};

enum class MclMethod { Implicit, Standard };

struct MclConfig {
  int particles = 100;
  MclMethod method = MclMethod::Implicit;
  /// Resample when ESS < resample_fraction * M.
  double resample_fraction = 0.5;
  MapKind map = MapKind::Quadratic;
  std::uint64_t seed = 0;
};

/// F(x) = (x - f)^T C^-1 (x - f)/2 + sum_i r_i^T S^-1 r_i/2 with r_i the
/// (wrapped) measurement residuals against known landmark positions.
Objective localization_objective(const FilterModel& model, const Vector& prior_mean, const Matrix& prior_cov,
                                 const std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>>& measurements);

/// log N(z; h(x, m), S) summed over the measurements.
double measurement_log_likelihood(const FilterModel& model, const Vector& pose,
                                  const std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>>& measurements);

/// Weighted mean; the heading component uses the circular mean. Throws
/// DegenerateEnsemble when no weight is finite.
Vector estimate(const FilterModel& model, const std::vector<Particle>& particles);

/// |est - truth| / |truth| over the stacked position (first two) coordinates.
double trajectory_error(const std::vector<Vector>& estimates, const std::vector<Vector>& truth);

/// M particles drawn from N(mean, cov) (all at mean when cov is empty).
std::vector<Particle> initial_particles(const Vector& mean, const Matrix& cov, int count, std::uint64_t seed);

/// Normalizes, and resamples systematically when the ESS falls below the
/// threshold. Returns the ESS before resampling.
double reweight(std::vector<Particle>& particles, double resample_fraction, Rng& rng);

class MclFilter {
 public:
  MclFilter(FilterModel model, LandmarkMap map, MclConfig config, std::vector<Particle> particles);

  /// Advance one control step; observations may be empty.
  void step(const Vector& u, const std::vector<Observation>& observations);

  Vector estimate() const { return imps::estimate(model_, particles_); }
  const std::vector<Particle>& particles() const { return particles_; }
  int steps() const { return step_; }
  /// Particles whose Newton solve failed and that fell back to the bootstrap proposal.
  int fallbacks() const { return fallbacks_; }
  double last_ess() const { return last_ess_; }

 private:
  FilterModel model_;
  LandmarkMap map_;
  MclConfig config_;
  std::vector<Particle> particles_;
  int step_ = 0;
  int fallbacks_ = 0;
  double last_ess_ = 0;
};

}  // namespace imps

#endif  // IMPS_MCL_HPP
