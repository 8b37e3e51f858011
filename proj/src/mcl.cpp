#include "imps/mcl.hpp"

#include <cmath>
#include <set>

#include <Eigen/Cholesky>

#include "imps/errors.hpp"

namespace imps {

LandmarkMap::LandmarkMap(std::vector<Landmark> landmarks) : landmarks_(std::move(landmarks)) {
  std::set<int> ids;
  for (const Landmark& l : landmarks_)
    if (!ids.insert(l.id).second) throw ConfigError("landmark map: duplicate id " + std::to_string(l.id));
}

const Eigen::Vector2d& LandmarkMap::at(int id) const {
  for (const Landmark& l : landmarks_)
    if (l.id == id) return l.position;
  throw UnknownLandmark(id);
}

namespace {

using Measurements = std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>>;

double log_det_2pi(const Eigen::Matrix2d& s) { return std::log((2 * M_PI * s).determinant()); }

Measurements resolve(const LandmarkMap& map, const std::vector<Observation>& observations) {
  Measurements m;
  for (const Observation& o : observations) m.emplace_back(map.at(o.id), o.z);
  return m;
}

}  // namespace

Objective localization_objective(const FilterModel& model, const Vector& prior_mean, const Matrix& prior_cov,
                                 const Measurements& measurements) {
  const Index n = model.pose_dim;
  const Eigen::LLT<Matrix> prior(prior_cov);
  if (prior.info() != Eigen::Success) throw NotPositiveDefinite(0);
  const Matrix prior_inv = prior.solve(Matrix::Identity(n, n));
  const Eigen::Matrix2d s_inv = model.sensor_cov.inverse();
  auto prior_residual = [&model, prior_mean](const Vector& x) {
    Vector d = x - prior_mean;
    if (model.angle_index >= 0) d[model.angle_index] = wrap_angle(d[model.angle_index]);
    return d;
  };
  auto value = [=, &model](const Vector& x) {
    const Vector d = prior_residual(x);
    double f = 0.5 * d.dot(prior_inv * d);
    for (const auto& [m, z] : measurements) {
      const Eigen::Vector2d r = model.residual(z, model.measure(x, m, false).h);
      f += 0.5 * r.dot(s_inv * r);
    }
    return f;
  };
  auto gradient = [=, &model](const Vector& x) {
    Vector g = prior_inv * prior_residual(x);
    for (const auto& [m, z] : measurements) {
      const MeasurementJet jet = model.measure(x, m, false);
      const Eigen::Vector2d r = model.residual(z, jet.h);
      g -= jet.jacobian.leftCols(n).transpose() * (s_inv * r);
    }
    return g;
  };
  auto hessian = [=, &model](const Vector& x) {
    Matrix h = prior_inv;
    for (const auto& [m, z] : measurements) {
      const MeasurementJet jet = model.measure(x, m, true);
      const Eigen::Vector2d w = s_inv * model.residual(z, jet.h);
      const Matrix jx = jet.jacobian.leftCols(n);
      h += jx.transpose() * s_inv * jx;
      for (std::size_t k = 0; k < 2; ++k)
        if (jet.hessian[k].size() > 0) h -= w[static_cast<Index>(k)] * jet.hessian[k].topLeftCorner(n, n);
    }
    return h;
  };
  return Objective(n, value, gradient, hessian);
}

double measurement_log_likelihood(const FilterModel& model, const Vector& pose, const Measurements& measurements) {
  const Eigen::Matrix2d s_inv = model.sensor_cov.inverse();
  const double c = log_det_2pi(model.sensor_cov);
  double ll = 0;
  for (const auto& [m, z] : measurements) {
    const Eigen::Vector2d r = model.residual(z, model.measure(pose, m, false).h);
    ll -= 0.5 * (r.dot(s_inv * r) + c);
  }
  return ll;
}

Vector estimate(const FilterModel& model, const std::vector<Particle>& particles) {
  std::vector<double> lw;
  lw.reserve(particles.size());
  for (const Particle& p : particles) lw.push_back(p.log_weight);
  const Vector w = normalize_log_weights(lw);
  Vector mean = Vector::Zero(model.pose_dim);
  double c = 0, s = 0;
  for (std::size_t j = 0; j < particles.size(); ++j) {
    const double wj = w[static_cast<Index>(j)];
    mean += wj * particles[j].pose;
    if (model.angle_index >= 0) {
      c += wj * std::cos(particles[j].pose[model.angle_index]);
      s += wj * std::sin(particles[j].pose[model.angle_index]);
    }
  }
  if (model.angle_index >= 0) mean[model.angle_index] = std::atan2(s, c);
  return mean;
}

double trajectory_error(const std::vector<Vector>& estimates, const std::vector<Vector>& truth) {
  if (estimates.size() != truth.size()) throw std::invalid_argument("trajectory_error: length mismatch");
  double d = 0, t = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    d += (estimates[i].head(2) - truth[i].head(2)).squaredNorm();
    t += truth[i].head(2).squaredNorm();
  }
  return std::sqrt(d / t);
}

std::vector<Particle> initial_particles(const Vector& mean, const Matrix& cov, int count, std::uint64_t seed) {
  std::vector<Particle> ps(static_cast<std::size_t>(count));
  Matrix l;
  if (cov.size() > 0) l = cov.llt().matrixL();
  for (int j = 0; j < count; ++j) {
    Particle& p = ps[static_cast<std::size_t>(j)];
    p.pose = mean;
    if (cov.size() > 0) {
      Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(j), 0, 7);
      p.pose += l * rng.normal_vector(mean.size());
    }
  }
  return ps;
}

double reweight(std::vector<Particle>& particles, double resample_fraction, Rng& rng) {
  std::vector<double> lw;
  lw.reserve(particles.size());
  for (const Particle& p : particles) lw.push_back(p.log_weight);
  const Vector w = normalize_log_weights(lw);
  const double e = ess(w);
  if (e < resample_fraction * static_cast<double>(particles.size())) {
    const std::vector<Index> idx = resample_systematic(w, rng);
    std::vector<Particle> next;
    next.reserve(particles.size());
    for (Index i : idx) next.push_back({particles[static_cast<std::size_t>(i)].pose, 0.0});
    particles = std::move(next);
  } else {
    for (std::size_t j = 0; j < particles.size(); ++j) particles[j].log_weight = std::log(w[static_cast<Index>(j)]);
  }
  return e;
}

MclFilter::MclFilter(FilterModel model, LandmarkMap map, MclConfig config, std::vector<Particle> particles)
    : model_(std::move(model)), map_(std::move(map)), config_(config), particles_(std::move(particles)) {
  if (particles_.empty()) throw ConfigError("mcl: need at least one particle");
}

void MclFilter::step(const Vector& u, const std::vector<Observation>& observations) {
  const Measurements meas = resolve(map_, observations);
  const double sensor_const = 0.5 * log_det_2pi(model_.sensor_cov) * static_cast<double>(meas.size());
  const auto step = static_cast<std::uint64_t>(step_);
  for (std::size_t j = 0; j < particles_.size(); ++j) {
    Particle& p = particles_[j];
    Rng rng = Rng::stream(config_.seed, step, j);
    const Vector f = model_.predict(p.pose, u);
    const Matrix cov = model_.process_cov(p.pose, u);
    const Vector xi = rng.normal_vector(model_.pose_dim);
    bool done = false;
    if (config_.method == MclMethod::Implicit && !meas.empty()) {
      try {
        const Objective obj = localization_objective(model_, f, cov, meas);
        const Preparation prep = prepare(obj, f);
        const ImplicitSample s = config_.map == MapKind::Quadratic ? sample_quadratic_map(obj, prep, xi)
                                                                   : sample_random_map(obj, prep, xi);
        const Eigen::LLT<Matrix> llt(cov);
        const double half_log_det = Vector(llt.matrixL().toDenseMatrix().diagonal()).array().log().sum();
        p.pose = s.x;
        p.log_weight += s.log_weight - half_log_det - sensor_const;
        done = true;
      } catch (const Error&) {
        ++fallbacks_;
      }
    }
    if (!done) {
      p.pose = f + Matrix(cov.llt().matrixL()) * xi;
      if (!meas.empty()) p.log_weight += measurement_log_likelihood(model_, p.pose, meas);
    }
    model_.normalize_pose(p.pose);
  }
  Rng rng = Rng::stream(config_.seed, step, 0, 1);
  last_ess_ = reweight(particles_, config_.resample_fraction, rng);
  ++step_;
}

}  // namespace imps
