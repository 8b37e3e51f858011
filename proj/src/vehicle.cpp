#include "imps/vehicle.hpp"

#include "imps/errors.hpp"

namespace imps {

Eigen::Matrix2d VehicleParams::sensor_cov() const {
  return Eigen::Vector2d(sigma_range * sigma_range, sigma_bearing * sigma_bearing).asDiagonal();
}

void VehicleParams::validate() const {
  if (!(L > 0 && delta > 0)) throw ConfigError("vehicle: wheel base and time step must be positive");
  if ((q.array() < 0).any() || (p.array() < 0).any()) throw ConfigError("vehicle: negative noise scale");
  if (!(sigma_range > 0 && sigma_bearing > 0)) throw ConfigError("vehicle: sensor noise must be positive");
}

double axle_speed(double v_l, double alpha, const VehicleParams& params) {
  const double den = params.L - std::tan(alpha) * params.H;
  if (!(den > 1e-9 * params.L) || std::abs(alpha) >= M_PI / 2)
    throw SteeringSingularity("steering angle makes the axle speed singular");
  return params.L * v_l / den;
}

Eigen::Vector3d motion_rhs(const Eigen::Vector3d& pose, double v_c, double alpha, const VehicleParams& params) {
  const double c = std::cos(pose[2]), s = std::sin(pose[2]);
  const double k = std::tan(alpha) / params.L;
  return v_c * Eigen::Vector3d(c - k * (params.a * s + params.b * c), s + k * (params.a * c - params.b * s), k);
}

Eigen::Matrix<double, 3, 2> motion_rhs_du(const Eigen::Vector3d& pose, double v_c, double alpha,
                                          const VehicleParams& params) {
  const double c = std::cos(pose[2]), s = std::sin(pose[2]);
  const double dk = 1 / (std::cos(alpha) * std::cos(alpha) * params.L);
  Eigen::Matrix<double, 3, 2> j;
  j.col(0) = motion_rhs(pose, 1, alpha, params);
  j.col(1) = v_c * dk * Eigen::Vector3d(-(params.a * s + params.b * c), params.a * c - params.b * s, 1);
  return j;
}

Eigen::Matrix3d motion_rhs_dx(const Eigen::Vector3d& pose, double v_c, double alpha, const VehicleParams& params) {
  const double c = std::cos(pose[2]), s = std::sin(pose[2]);
  const double k = std::tan(alpha) / params.L;
  Eigen::Matrix3d j = Eigen::Matrix3d::Zero();
  j(0, 2) = v_c * (-s - k * (params.a * c - params.b * s));
  j(1, 2) = v_c * (c - k * (params.a * s + params.b * c));
  return j;
}

Eigen::Matrix3d process_noise_cov(const Eigen::Vector3d& pose, double v_l, double alpha, const VehicleParams& params) {
  const double v_c = axle_speed(v_l, alpha, params);
  const Eigen::Matrix<double, 3, 2> du = motion_rhs_du(pose, v_c, alpha, params);
  const Eigen::Matrix2d pp = params.p.array().square().matrix().asDiagonal();
  const Eigen::Matrix3d qq = params.q.array().square().matrix().asDiagonal();
  Eigen::Matrix3d cov = params.delta * (du * pp * du.transpose() + qq);
  cov = 0.5 * (cov + cov.transpose()).eval();
  cov.diagonal().array() += 1e-12;
  return cov;
}

Eigen::Vector3d propagate(const Eigen::Vector3d& pose, double v_l, double alpha, const VehicleParams& params,
                          const Eigen::Vector3d& noise) {
  const double v_c = axle_speed(v_l, alpha, params);
  Eigen::Vector3d next = pose + params.delta * motion_rhs(pose, v_c, alpha, params) + noise;
  next[2] = wrap_angle(next[2]);
  return next;
}

Eigen::Vector3d propagate(const Eigen::Vector3d& pose, double v_l, double alpha, const VehicleParams& params,
                          Rng& rng) {
  const Eigen::Matrix3d l = process_noise_cov(pose, v_l, alpha, params).llt().matrixL();
  const Eigen::Vector3d xi(rng.normal(), rng.normal(), rng.normal());
  return propagate(pose, v_l, alpha, params, Eigen::Vector3d(l * xi));
}

RangeBearing measure(const Eigen::Vector3d& pose, const Eigen::Vector2d& landmark) {
  const Eigen::Vector2d d = landmark - pose.head<2>();
  const double r = d.norm();
  if (!(r > 0)) throw Error("measure: landmark coincides with the laser");
  return {r, wrap_angle(std::atan2(d[1], d[0]) - pose[2] + M_PI / 2)};
}

RangeBearing measure(const Eigen::Vector3d& pose, const Eigen::Vector2d& landmark, const VehicleParams& params,
                     Rng& rng) {
  RangeBearing z = measure(pose, landmark);
  z.range += params.sigma_range * rng.normal();
  z.bearing = wrap_angle(z.bearing + params.sigma_bearing * rng.normal());
  return z;
}

MeasurementJet measurement_jet(const Eigen::Vector3d& pose, const Eigen::Vector2d& landmark, bool second_order) {
  const RangeBearing z = measure(pose, landmark);
  const double d1 = pose[0] - landmark[0], d2 = pose[1] - landmark[1];
  const double r = z.range, r2 = r * r;
  MeasurementJet jet;
  jet.h = z.vec();
  jet.jacobian = Matrix::Zero(2, 5);
  // range and bearing depend on the pose position through pose - landmark
  jet.jacobian(0, 0) = d1 / r;
  jet.jacobian(0, 1) = d2 / r;
  jet.jacobian(1, 0) = -d2 / r2;
  jet.jacobian(1, 1) = d1 / r2;
  jet.jacobian(1, 2) = -1;
  jet.jacobian.block(0, 3, 2, 2) = -jet.jacobian.block(0, 0, 2, 2);
  if (second_order) {
    Eigen::Matrix2d hr;
    hr << 1 / r - d1 * d1 / (r2 * r), -d1 * d2 / (r2 * r), -d1 * d2 / (r2 * r), 1 / r - d2 * d2 / (r2 * r);
    Eigen::Matrix2d hb;
    hb << 2 * d1 * d2, d2 * d2 - d1 * d1, d2 * d2 - d1 * d1, -2 * d1 * d2;
    hb /= r2 * r2;
    for (int k = 0; k < 2; ++k) {
      const Eigen::Matrix2d& h = k == 0 ? hr : hb;
      Matrix full = Matrix::Zero(5, 5);
      full.block(0, 0, 2, 2) = h;
      full.block(3, 3, 2, 2) = h;
      full.block(0, 3, 2, 2) = -h;
      full.block(3, 0, 2, 2) = -h;
      jet.hessian[static_cast<std::size_t>(k)] = full;
    }
  }
  return jet;
}

Eigen::Vector2d landmark_from(const Eigen::Vector3d& pose, const Eigen::Vector2d& z) {
  const double psi = z[1] + pose[2] - M_PI / 2;
  return pose.head<2>() + z[0] * Eigen::Vector2d(std::cos(psi), std::sin(psi));
}

FilterModel vehicle_model(const VehicleParams& params) {
  params.validate();
  FilterModel m;
  m.pose_dim = 3;
  m.angle_index = 2;
  m.angular_bearing = true;
  m.sensor_cov = params.sensor_cov();
  m.predict = [params](const Vector& x, const Vector& u) {
    const double v_c = axle_speed(u[0], u[1], params);
    Vector f = x + params.delta * motion_rhs(x, v_c, u[1], params);
    f[2] = wrap_angle(f[2]);
    return f;
  };
  m.predict_jacobian = [params](const Vector& x, const Vector& u) {
    const double v_c = axle_speed(u[0], u[1], params);
    return Matrix(Eigen::Matrix3d::Identity() + params.delta * motion_rhs_dx(x, v_c, u[1], params));
  };
  m.process_cov = [params](const Vector& x, const Vector& u) {
    return Matrix(process_noise_cov(x, u[0], u[1], params));
  };
  m.measure = [](const Vector& x, const Eigen::Vector2d& landmark, bool second_order) {
    return measurement_jet(x, landmark, second_order);
  };
  m.invert = [](const Vector& x, const Eigen::Vector2d& z) { return landmark_from(x, z); };
  m.invert_jacobian = [](const Vector& x, const Eigen::Vector2d& z) {
    const double psi = z[1] + x[2] - M_PI / 2;
    Eigen::Matrix2d j;
    j << std::cos(psi), -z[0] * std::sin(psi), std::sin(psi), z[0] * std::cos(psi);
    return j;
  };
  m.invert_pose_jacobian = [](const Vector& x, const Eigen::Vector2d& z) {
    const double psi = z[1] + x[2] - M_PI / 2;
    Matrix j = Matrix::Identity(2, 3);
    j(0, 2) = -z[0] * std::sin(psi);
    j(1, 2) = z[0] * std::cos(psi);
    return j;
  };
  return m;
}

}  // namespace imps
