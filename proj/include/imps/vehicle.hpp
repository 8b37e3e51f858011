#ifndef IMPS_VEHICLE_HPP
#define IMPS_VEHICLE_HPP

// Kinematic car with a laser on the front bumper. The pose is the laser
// position and the heading, (x, y, beta).

#include <cmath>

#include <Eigen/Core>

#include "imps/filter_model.hpp"
#include "imps/random.hpp"

namespace imps {

struct VehicleParams {
  double L = 2.83;    // wheel base
  double H = 0.76;    // width
  double b = 0.5;     // lateral laser offset
  double a = 3.78;    // rear axle to laser
  double delta = 0.025;
  Eigen::Vector3d q{0.1, 0.1, 0.1 * M_PI / 180};  // diagonal of Q
  Eigen::Vector2d p{0.5, 0.5};                    // diagonal of P
  double sigma_range = 0.05;
  double sigma_bearing = 0.05 * M_PI / 180;

  Eigen::Matrix2d sensor_cov() const;
  void validate() const;
};

struct RangeBearing {
  double range = 0;
  double bearing = 0;

  Eigen::Vector2d vec() const { return {range, bearing}; }
};

/// Rear-left wheel speed to axle speed; throws SteeringSingularity.
double axle_speed(double v_l, double alpha, const VehicleParams& params);

/// Time derivative of the pose at axle speed v_c and steering alpha.
Eigen::Vector3d motion_rhs(const Eigen::Vector3d& pose, double v_c, double alpha, const VehicleParams& params);
/// d rhs / d (v_c, alpha)
Eigen::Matrix<double, 3, 2> motion_rhs_du(const Eigen::Vector3d& pose, double v_c, double alpha,
                                          const VehicleParams& params);
/// d rhs / d pose
Eigen::Matrix3d motion_rhs_dx(const Eigen::Vector3d& pose, double v_c, double alpha, const VehicleParams& params);

/// delta (dR/du P P^T dR/du^T + Q Q^T) + 1e-12 I
Eigen::Matrix3d process_noise_cov(const Eigen::Vector3d& pose, double v_l, double alpha, const VehicleParams& params);

/// One Euler step plus the given noise increment; heading rewrapped.
Eigen::Vector3d propagate(const Eigen::Vector3d& pose, double v_l, double alpha, const VehicleParams& params,
                          const Eigen::Vector3d& noise);
Eigen::Vector3d propagate(const Eigen::Vector3d& pose, double v_l, double alpha, const VehicleParams& params,
                          Rng& rng);

/// Exact range and bearing; throws Error when the landmark sits on the laser.
RangeBearing measure(const Eigen::Vector3d& pose, const Eigen::Vector2d& landmark);
RangeBearing measure(const Eigen::Vector3d& pose, const Eigen::Vector2d& landmark, const VehicleParams& params,
                     Rng& rng);

/// Range and bearing with analytic first and (optionally) second
/// derivatives in (x, y, beta, m1, m2).
MeasurementJet measurement_jet(const Eigen::Vector3d& pose, const Eigen::Vector2d& landmark, bool second_order);

/// Landmark position at range/bearing z from the pose.
Eigen::Vector2d landmark_from(const Eigen::Vector3d& pose, const Eigen::Vector2d& z);

/// Control vector (v_l, alpha).
FilterModel vehicle_model(const VehicleParams& params);

}  // namespace imps

#endif  // IMPS_VEHICLE_HPP
