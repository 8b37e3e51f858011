#include "imps/filter_model.hpp"

#include <cmath>

namespace imps {

double wrap_angle(double a) {
  double w = std::remainder(a, 2 * M_PI);
  if (w <= -M_PI) w += 2 * M_PI;
  return w;
}

Eigen::Vector2d FilterModel::residual(const Eigen::Vector2d& z, const Eigen::Vector2d& h) const {
  Eigen::Vector2d r = z - h;
  if (angular_bearing) r[1] = wrap_angle(r[1]);
  return r;
}

void FilterModel::normalize_pose(Vector& pose) const {
  if (angle_index >= 0) pose[angle_index] = wrap_angle(pose[angle_index]);
}

FilterModel linear_model(const Matrix& process_cov, const Eigen::Matrix2d& sensor_cov) {
  const Index n = process_cov.rows();
  if (n < 2 || process_cov.cols() != n) throw std::invalid_argument("linear_model: need a square covariance, n >= 2");
  FilterModel m;
  m.pose_dim = n;
  m.sensor_cov = sensor_cov;
  m.predict = [](const Vector& x, const Vector& u) { return Vector(x + u); };
  m.predict_jacobian = [n](const Vector&, const Vector&) { return Matrix(Matrix::Identity(n, n)); };
  m.process_cov = [process_cov](const Vector&, const Vector&) { return process_cov; };
  m.measure = [n](const Vector& x, const Eigen::Vector2d& landmark, bool second_order) {
    MeasurementJet jet;
    jet.h = landmark - x.head<2>();
    jet.jacobian = Matrix::Zero(2, n + 2);
    jet.jacobian.leftCols<2>() = -Matrix::Identity(2, 2);
    jet.jacobian.rightCols<2>() = Matrix::Identity(2, 2);
    if (second_order) jet.hessian = {Matrix::Zero(n + 2, n + 2), Matrix::Zero(n + 2, n + 2)};
    return jet;
  };
  m.invert = [](const Vector& x, const Eigen::Vector2d& z) { return Eigen::Vector2d(x.head<2>() + z); };
  m.invert_jacobian = [](const Vector&, const Eigen::Vector2d&) { return Eigen::Matrix2d::Identity(); };
  m.invert_pose_jacobian = [n](const Vector&, const Eigen::Vector2d&) { return Matrix(Matrix::Identity(2, n)); };
  return m;
}

}  // namespace imps
