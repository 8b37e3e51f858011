#ifndef IMPS_SLAM_HPP
#define IMPS_SLAM_HPP

// Online landmark SLAM, one range/bearing return per step with unknown
// identity: implicit sampling over (pose, observed feature), a fastSLAM 1.0
// baseline and EKF SLAM.

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "imps/filter_model.hpp"
#include "imps/mcl.hpp"
#include "imps/sampler.hpp"
#include "imps/vehicle.hpp"

namespace imps {

/// chi-square(2) 0.99 quantile.
constexpr double kAssociationGate = 9.21;

struct FeatureEstimate {
  int id = 0;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
};

struct SlamParticle {
  Vector pose;
  std::vector<FeatureEstimate> features;
  double log_weight = 0;
  int next_id = 0;
};

/// Index into the particle's features, or -1 for a new feature.
struct Association {
  int index = -1;
  double d2 = 0;
};

/// Maximum-likelihood association by Mahalanobis distance of the innovation,
/// S = J_m C J_m^T + sensor_cov at the given pose, plus J_x pose_cov J_x^T
/// when the pose itself is uncertain (pose_cov non-empty).
Association associate(const FilterModel& model, const Vector& pose, const std::vector<FeatureEstimate>& features,
                      const Eigen::Vector2d& z, double gate = kAssociationGate, const Matrix& pose_cov = Matrix());

/// Feature by inverting the measurement at the pose; covariance J S J^T.
FeatureEstimate init_feature(const FilterModel& model, const Vector& pose, const Eigen::Vector2d& z, int id);

/// Random visible feature (within `radius`, bearing in the forward half
/// plane) with a noisy measurement, or nothing. The id is the true one.
std::optional<Observation> synthetic_scan(const Eigen::Vector3d& pose, const LandmarkMap& map,
                                          const VehicleParams& params, Rng& rng, double radius = 15);

enum class SlamMethod { Implicit, FastSlam, Ekf };

struct SlamConfig {
  int particles = 100;
  SlamMethod method = SlamMethod::Implicit;
  double resample_fraction = 0.5;
  MapKind map = MapKind::Quadratic;
  double gate = kAssociationGate;
  std::uint64_t seed = 0;
};

/// log-likelihood credited to a measurement that starts a new feature: the
/// sensor density at the edge of the gate.
double new_feature_log_likelihood(const FilterModel& model, double gate);

class ParticleSlam {
 public:
  /// Implicit or FastSlam.
  ParticleSlam(FilterModel model, SlamConfig config, const Vector& initial_pose);
  /// Starts from given particles (e.g. with known features).
  ParticleSlam(FilterModel model, SlamConfig config, std::vector<SlamParticle> particles);

  void step(const Vector& u, const std::optional<Eigen::Vector2d>& z);

  Vector estimate() const;
  const std::vector<SlamParticle>& particles() const { return particles_; }
  int fallbacks() const { return fallbacks_; }
  double last_ess() const { return last_ess_; }

 private:
  void step_implicit(SlamParticle& p, const Vector& u, const Eigen::Vector2d& z, const Vector& xi);
  void step_fastslam(SlamParticle& p, const Vector& u, const Eigen::Vector2d& z, const Vector& xi);

  FilterModel model_;
  SlamConfig config_;
  std::vector<SlamParticle> particles_;
  double new_feature_ll_;
  int step_ = 0;
  int fallbacks_ = 0;
  double last_ess_ = 0;
};

class EkfSlam {
 public:
  EkfSlam(FilterModel model, const Vector& initial_pose, const Matrix& initial_cov, double gate = kAssociationGate);

  void step(const Vector& u, const std::optional<Eigen::Vector2d>& z);

  Vector pose() const { return state_.head(model_.pose_dim); }
  const Vector& state() const { return state_; }
  const Matrix& covariance() const { return cov_; }
  Index features() const { return (state_.size() - model_.pose_dim) / 2; }
  /// Covariance repairs (symmetrize + jitter) after a failed factorization.
  int repairs() const { return repairs_; }

 private:
  FilterModel model_;
  Vector state_;
  Matrix cov_;
  double gate_;
  int repairs_ = 0;
};

}  // namespace imps

#endif  // IMPS_SLAM_HPP
