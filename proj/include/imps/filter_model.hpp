#ifndef IMPS_FILTER_MODEL_HPP
#define IMPS_FILTER_MODEL_HPP

// Motion and landmark-measurement model consumed by the localization and
// mapping filters. The vehicle provides one; tests use a linear one.

#include <array>
#include <functional>

#include <Eigen/Core>

#include "imps/numerics.hpp"

namespace imps {

/// Measurement of one landmark and its derivatives with respect to the
/// stacked (pose, landmark) vector.
struct MeasurementJet {
  Eigen::Vector2d h = Eigen::Vector2d::Zero();
  Matrix jacobian;                // 2 x (pose_dim + 2)
  std::array<Matrix, 2> hessian;  // per component; empty unless requested
};

struct FilterModel {
  Index pose_dim = 3;
  /// Pose component holding a heading, -1 if none.
  Index angle_index = -1;
  /// Second measurement component is an angle (residuals are wrapped).
  bool angular_bearing = false;

  /// Noiseless one-step prediction f(x, u).
  std::function<Vector(const Vector& pose, const Vector& u)> predict;
  std::function<Matrix(const Vector& pose, const Vector& u)> predict_jacobian;
  /// Covariance of the additive one-step noise.
  std::function<Matrix(const Vector& pose, const Vector& u)> process_cov;
  std::function<MeasurementJet(const Vector& pose, const Eigen::Vector2d& landmark, bool second_order)> measure;
  Eigen::Matrix2d sensor_cov = Eigen::Matrix2d::Identity();
  /// Landmark position seen from `pose` at measurement z, with its
  /// derivatives in z (2 x 2) and in the pose (2 x pose_dim).
  std::function<Eigen::Vector2d(const Vector& pose, const Eigen::Vector2d& z)> invert;
  std::function<Eigen::Matrix2d(const Vector& pose, const Eigen::Vector2d& z)> invert_jacobian;
  std::function<Matrix(const Vector& pose, const Eigen::Vector2d& z)> invert_pose_jacobian;

  /// z - h with the angular component wrapped.
  Eigen::Vector2d residual(const Eigen::Vector2d& z, const Eigen::Vector2d& h) const;
  void normalize_pose(Vector& pose) const;
};

/// Angle in (-pi, pi].
double wrap_angle(double a);

/// x' = x + u + noise, z = m - x[0:2] + noise: the linear-Gaussian surrogate
/// on which every filter must agree with the Kalman filter.
FilterModel linear_model(const Matrix& process_cov, const Eigen::Matrix2d& sensor_cov);

}  // namespace imps

#endif  // IMPS_FILTER_MODEL_HPP
