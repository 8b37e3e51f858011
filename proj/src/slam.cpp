#include "imps/slam.hpp"

#include <cmath>

#include <Eigen/Cholesky>

#include "imps/errors.hpp"

namespace imps {

namespace {

double half_log_det(const Matrix& spd) {
  const Eigen::LLT<Matrix> llt(spd);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite(0);
  return Vector(llt.matrixL().toDenseMatrix().diagonal()).array().log().sum();
}

Vector wrapped_difference(const FilterModel& model, const Vector& a, const Vector& b) {
  Vector d = a - b;
  if (model.angle_index >= 0) d[model.angle_index] = wrap_angle(d[model.angle_index]);
  return d;
}

// F(x, m) over the pose and one feature with Gaussian prior N(mu, C).
Objective pose_feature_objective(const FilterModel& model, const Vector& f, const Matrix& process,
                                 const Eigen::Vector2d& z, const Eigen::Vector2d& mu, const Eigen::Matrix2d& c) {
  const Index n = model.pose_dim;
  const Matrix p_inv = process.llt().solve(Matrix::Identity(n, n));
  const Eigen::Matrix2d c_inv = c.inverse();
  const Eigen::Matrix2d s_inv = model.sensor_cov.inverse();
  auto value = [=, &model](const Vector& v) {
    const Vector d = wrapped_difference(model, v.head(n), f);
    const Eigen::Vector2d e = v.tail<2>() - mu;
    const Eigen::Vector2d r = model.residual(z, model.measure(v.head(n), v.tail<2>(), false).h);
    return 0.5 * (d.dot(p_inv * d) + e.dot(c_inv * e) + r.dot(s_inv * r));
  };
  auto gradient = [=, &model](const Vector& v) {
    const MeasurementJet jet = model.measure(v.head(n), v.tail<2>(), false);
    Vector g(n + 2);
    g.head(n) = p_inv * wrapped_difference(model, v.head(n), f);
    g.tail<2>() = c_inv * (v.tail<2>() - mu);
    g -= jet.jacobian.transpose() * (s_inv * model.residual(z, jet.h));
    return g;
  };
  auto hessian = [=, &model](const Vector& v) {
    const MeasurementJet jet = model.measure(v.head(n), v.tail<2>(), true);
    const Eigen::Vector2d w = s_inv * model.residual(z, jet.h);
    Matrix h = jet.jacobian.transpose() * s_inv * jet.jacobian;
    h.topLeftCorner(n, n) += p_inv;
    h.bottomRightCorner<2, 2>() += c_inv;
    for (std::size_t k = 0; k < 2; ++k)
      if (jet.hessian[k].size() > 0) h -= w[static_cast<Index>(k)] * jet.hessian[k];
    return h;
  };
  return Objective(n + 2, value, gradient, hessian);
}

// Innovation of z against a feature seen from pose: residual, S, d2 and the
// feature Jacobian.
struct Innovation {
  Eigen::Vector2d nu;
  Eigen::Matrix2d s;
  Eigen::Matrix2d jm;
  double d2 = 0;
};

Innovation innovation(const FilterModel& model, const Vector& pose, const FeatureEstimate& feat,
                      const Eigen::Vector2d& z, const Matrix& pose_cov = Matrix()) {
  const MeasurementJet jet = model.measure(pose, feat.mean, false);
  Innovation in;
  in.jm = jet.jacobian.rightCols<2>();
  in.nu = model.residual(z, jet.h);
  in.s = in.jm * feat.cov * in.jm.transpose() + model.sensor_cov;
  if (pose_cov.size() > 0) {
    const Matrix jx = jet.jacobian.leftCols(model.pose_dim);
    in.s += jx * pose_cov * jx.transpose();
  }
  in.d2 = in.nu.dot(in.s.ldlt().solve(in.nu));
  return in;
}

double gaussian_log_density(const Eigen::Vector2d& nu, const Eigen::Matrix2d& s) {
  return -0.5 * (nu.dot(s.ldlt().solve(nu)) + std::log((2 * M_PI * s).determinant()));
}

}  // namespace

Association associate(const FilterModel& model, const Vector& pose, const std::vector<FeatureEstimate>& features,
                      const Eigen::Vector2d& z, double gate, const Matrix& pose_cov) {
  Association best;
  best.d2 = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < features.size(); ++k) {
    double d2;
    try {
      d2 = innovation(model, pose, features[k], z, pose_cov).d2;
    } catch (const Error&) {
      continue;
    }
    if (d2 < best.d2) {
      best.d2 = d2;
      best.index = static_cast<int>(k);
    }
  }
  if (best.d2 > gate) best.index = -1;
  return best;
}

FeatureEstimate init_feature(const FilterModel& model, const Vector& pose, const Eigen::Vector2d& z, int id) {
  FeatureEstimate f;
  f.id = id;
  f.mean = model.invert(pose, z);
  const Eigen::Matrix2d j = model.invert_jacobian(pose, z);
  f.cov = j * model.sensor_cov * j.transpose();
  f.cov = 0.5 * (f.cov + f.cov.transpose()).eval();
  return f;
}

std::optional<Observation> synthetic_scan(const Eigen::Vector3d& pose, const LandmarkMap& map,
                                          const VehicleParams& params, Rng& rng, double radius) {
  std::vector<const Landmark*> visible;
  for (const Landmark& l : map.landmarks()) {
    const Eigen::Vector2d d = l.position - pose.head<2>();
    const double r = d.norm();
    if (r <= 0 || r > radius) continue;
    // forward half plane of the heading
    if (d.dot(Eigen::Vector2d(std::cos(pose[2]), std::sin(pose[2]))) < 0) continue;
    visible.push_back(&l);
  }
  if (visible.empty()) return std::nullopt;
  const Landmark& l = *visible[rng.index(visible.size())];
  return Observation{l.id, measure(pose, l.position, params, rng).vec()};
}

double new_feature_log_likelihood(const FilterModel& model, double gate) {
  return -0.5 * (gate + std::log((2 * M_PI * model.sensor_cov).determinant()));
}

ParticleSlam::ParticleSlam(FilterModel model, SlamConfig config, const Vector& initial_pose)
    : ParticleSlam(std::move(model), config,
                   std::vector<SlamParticle>(static_cast<std::size_t>(std::max(config.particles, 0)),
                                             SlamParticle{initial_pose, {}, 0.0, 0})) {}

ParticleSlam::ParticleSlam(FilterModel model, SlamConfig config, std::vector<SlamParticle> particles)
    : model_(std::move(model)), config_(config), particles_(std::move(particles)) {
  if (particles_.empty()) throw ConfigError("slam: need at least one particle");
  if (config_.method == SlamMethod::Ekf) throw ConfigError("slam: EKF SLAM is not particle based");
  config_.particles = static_cast<int>(particles_.size());
  new_feature_ll_ = new_feature_log_likelihood(model_, config_.gate);
}

void ParticleSlam::step_fastslam(SlamParticle& p, const Vector& u, const Eigen::Vector2d& z, const Vector& xi) {
  const Matrix cov = model_.process_cov(p.pose, u);
  p.pose = model_.predict(p.pose, u) + Matrix(cov.llt().matrixL()) * xi;
  model_.normalize_pose(p.pose);
  const Association a = associate(model_, p.pose, p.features, z, config_.gate);
  if (a.index < 0) {
    p.features.push_back(init_feature(model_, p.pose, z, p.next_id++));
    p.log_weight += new_feature_ll_;
    return;
  }
  FeatureEstimate& feat = p.features[static_cast<std::size_t>(a.index)];
  const Innovation in = innovation(model_, p.pose, feat, z);
  p.log_weight += gaussian_log_density(in.nu, in.s);
  const Eigen::Matrix2d k = feat.cov * in.jm.transpose() * in.s.inverse();
  const Eigen::Matrix2d ikh = Eigen::Matrix2d::Identity() - k * in.jm;
  feat.mean += k * in.nu;
  feat.cov = ikh * feat.cov * ikh.transpose() + k * model_.sensor_cov * k.transpose();
}

void ParticleSlam::step_implicit(SlamParticle& p, const Vector& u, const Eigen::Vector2d& z, const Vector& xi) {
  const Index n = model_.pose_dim;
  const Vector f = model_.predict(p.pose, u);
  const Matrix cov = model_.process_cov(p.pose, u);
  const Association a = associate(model_, f, p.features, z, config_.gate, cov);
  if (a.index < 0) {
    // nothing to condition the pose on: propagate and start a feature
    p.pose = f + Matrix(cov.llt().matrixL()) * xi.head(n);
    model_.normalize_pose(p.pose);
    p.features.push_back(init_feature(model_, p.pose, z, p.next_id++));
    // density at the gate, on the same pose-marginal scale as a matched return
    const Matrix jx = model_.measure(f, p.features.back().mean, false).jacobian.leftCols(n);
    const Eigen::Matrix2d s = model_.sensor_cov + jx * cov * jx.transpose();
    p.log_weight += -0.5 * (config_.gate + std::log((2 * M_PI * s).determinant()));
    return;
  }
  FeatureEstimate& feat = p.features[static_cast<std::size_t>(a.index)];
  const Objective obj = pose_feature_objective(model_, f, cov, z, feat.mean, feat.cov);
  Vector start(n + 2);
  start << f, feat.mean;
  const Preparation prep = prepare(obj, start);
  const ImplicitSample s =
      config_.map == MapKind::Quadratic ? sample_quadratic_map(obj, prep, xi) : sample_random_map(obj, prep, xi);
  p.log_weight += s.log_weight - half_log_det(cov) - half_log_det(feat.cov) -
                  0.5 * std::log((2 * M_PI * model_.sensor_cov).determinant());
  p.pose = s.x.head(n);
  model_.normalize_pose(p.pose);
  // feature given the sampled pose, from the Laplace approximation
  const Matrix h = prep.L * prep.L.transpose();
  const Eigen::Matrix2d hmm = h.bottomRightCorner<2, 2>();
  const Eigen::Matrix2d hmm_inv = hmm.inverse();
  const Vector dx = wrapped_difference(model_, s.x.head(n), prep.mu.head(n));
  feat.mean = prep.mu.tail<2>() - hmm_inv * (h.bottomLeftCorner(2, n) * dx);
  feat.cov = 0.5 * (hmm_inv + hmm_inv.transpose());
}

void ParticleSlam::step(const Vector& u, const std::optional<Eigen::Vector2d>& z) {
  const auto step = static_cast<std::uint64_t>(step_);
  const Index n = model_.pose_dim;
  for (std::size_t j = 0; j < particles_.size(); ++j) {
    SlamParticle& p = particles_[j];
    Rng rng = Rng::stream(config_.seed, step, j);
    const Vector xi = rng.normal_vector(n + 2);
    if (!z) {
      const Matrix cov = model_.process_cov(p.pose, u);
      p.pose = model_.predict(p.pose, u) + Matrix(cov.llt().matrixL()) * xi.head(n);
      model_.normalize_pose(p.pose);
      continue;
    }
    if (config_.method == SlamMethod::Implicit) {
      const SlamParticle before = p;
      try {
        step_implicit(p, u, *z, xi);
        continue;
      } catch (const Error&) {
        p = before;
        ++fallbacks_;
      }
    }
    step_fastslam(p, u, *z, xi.head(n));
  }
  if (z) {
    std::vector<Particle> view;
    view.reserve(particles_.size());
    for (const SlamParticle& p : particles_) view.push_back({p.pose, p.log_weight});
    std::vector<double> lw;
    for (const Particle& p : view) lw.push_back(p.log_weight);
    const Vector w = normalize_log_weights(lw);
    last_ess_ = ess(w);
    if (last_ess_ < config_.resample_fraction * static_cast<double>(particles_.size())) {
      Rng rng = Rng::stream(config_.seed, step, 0, 1);
      const std::vector<Index> idx = resample_systematic(w, rng);
      std::vector<SlamParticle> next;
      next.reserve(particles_.size());
      for (Index i : idx) {
        next.push_back(particles_[static_cast<std::size_t>(i)]);
        next.back().log_weight = 0;
      }
      particles_ = std::move(next);
    } else {
      for (std::size_t j = 0; j < particles_.size(); ++j) particles_[j].log_weight = std::log(w[static_cast<Index>(j)]);
    }
  }
  ++step_;
}

Vector ParticleSlam::estimate() const {
  std::vector<Particle> view;
  view.reserve(particles_.size());
  for (const SlamParticle& p : particles_) view.push_back({p.pose, p.log_weight});
  return imps::estimate(model_, view);
}

EkfSlam::EkfSlam(FilterModel model, const Vector& initial_pose, const Matrix& initial_cov, double gate)
    : model_(std::move(model)), state_(initial_pose), cov_(initial_cov), gate_(gate) {
  if (cov_.size() == 0) cov_ = Matrix::Zero(state_.size(), state_.size());
}

void EkfSlam::step(const Vector& u, const std::optional<Eigen::Vector2d>& z) {
  const Index n = model_.pose_dim;
  const Index dim = state_.size();
  const Vector pose = state_.head(n);
  const Matrix fx = model_.predict_jacobian(pose, u);
  state_.head(n) = model_.predict(pose, u);
  cov_.topLeftCorner(n, n) = fx * cov_.topLeftCorner(n, n) * fx.transpose() + model_.process_cov(pose, u);
  if (dim > n) {
    cov_.topRightCorner(n, dim - n) = fx * cov_.topRightCorner(n, dim - n);
    cov_.bottomLeftCorner(dim - n, n) = cov_.topRightCorner(n, dim - n).transpose();
  }
  Vector x = state_.head(n);
  model_.normalize_pose(x);
  state_.head(n) = x;
  if (!z) return;

  // association against the marginal of each feature
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  Matrix best_j;
  Eigen::Vector2d best_nu;
  Eigen::Matrix2d best_s;
  for (Index k = 0; k < features(); ++k) {
    const Index off = n + 2 * k;
    MeasurementJet jet;
    try {
      jet = model_.measure(x, state_.segment<2>(off), false);
    } catch (const Error&) {
      continue;
    }
    Matrix j = Matrix::Zero(2, dim);
    j.leftCols(n) = jet.jacobian.leftCols(n);
    j.middleCols(off, 2) = jet.jacobian.rightCols<2>();
    const Eigen::Matrix2d s = j * cov_ * j.transpose() + model_.sensor_cov;
    const Eigen::Vector2d nu = model_.residual(*z, jet.h);
    const double d2 = nu.dot(s.ldlt().solve(nu));
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<int>(k);
      best_j = j;
      best_nu = nu;
      best_s = s;
    }
  }
  if (best < 0 || best_d2 > gate_) {
    const Eigen::Vector2d m = model_.invert(x, *z);
    const Matrix gx = model_.invert_pose_jacobian(x, *z);
    const Eigen::Matrix2d gz = model_.invert_jacobian(x, *z);
    Vector s2(dim + 2);
    s2 << state_, m;
    Matrix c2 = Matrix::Zero(dim + 2, dim + 2);
    c2.topLeftCorner(dim, dim) = cov_;
    const Matrix cross = gx * cov_.topRows(n);  // 2 x dim
    c2.bottomLeftCorner(2, dim) = cross;
    c2.topRightCorner(dim, 2) = cross.transpose();
    c2.bottomRightCorner<2, 2>() = gx * cov_.topLeftCorner(n, n) * gx.transpose() + gz * model_.sensor_cov * gz.transpose();
    state_ = std::move(s2);
    cov_ = std::move(c2);
    return;
  }
  const Matrix k = cov_ * best_j.transpose() * best_s.inverse();
  state_ += k * best_nu;
  Matrix ikh = Matrix::Identity(dim, dim) - k * best_j;
  cov_ = ikh * cov_ * ikh.transpose() + k * model_.sensor_cov * k.transpose();
  cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
  if (Eigen::LLT<Matrix>(cov_).info() != Eigen::Success) {
    cov_.diagonal().array() += 1e-9;
    ++repairs_;
  }
  x = state_.head(n);
  model_.normalize_pose(x);
  state_.head(n) = x;
}

}  // namespace imps
