#include "imps/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "imps/errors.hpp"

namespace imps {

namespace {

using Clock = std::chrono::steady_clock;

RunRecord make_record(std::string method, int samples, std::uint64_t seed) {
  RunRecord r;
  r.method = std::move(method);
  r.samples = samples;
  r.seed = seed;
  return r;
}

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream s(line);
  while (std::getline(s, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("bad number: " + s);
  return v;
}

std::string clean(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

// Steering profile: a smooth sign change between the lobes with amplitude
// `left` on the first half lap and `right` on the second.
double steering(double t, double period, double left, double right) {
  const double s = std::tanh(4 * std::sin(2 * M_PI * t / period));
  return s >= 0 ? left * s : right * s;
}

double wheel_speed(const CourseConfig& c, double t, double period) {
  return c.speed + c.speed_swing * std::sin(4 * M_PI * t / period);
}

// Heading gained over lobe 0 or 1 of the schedule.
double lobe_turn(const CourseConfig& c, const VehicleParams& p, double period, double amplitude, int lobe) {
  double turn = 0;
  const long n = std::lround(period / p.delta);
  for (long k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * p.delta;
    if ((t < period / 2) != (lobe == 0)) continue;
    const double alpha = steering(t, period, amplitude, amplitude);
    turn += p.delta * axle_speed(wheel_speed(c, t, period), alpha, p) * std::tan(alpha) / p.L;
  }
  return std::abs(turn);
}

template <class F>
double bisect(double lo, double hi, F too_small) {
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (too_small(mid) ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

VehicleParams benchmark_vehicle() {
  VehicleParams p;
  p.p[1] = 0.5 * M_PI / 180;
  return p;
}

std::vector<Landmark> CourseConfig::default_landmarks() {
  std::vector<Landmark> out;
  int id = 0;
  for (double y : {-14.0, 0.0, 14.0})
    for (double x : {-14.0, -4.5, 4.5, 14.0}) out.push_back({id++, {x, y}});
  return out;
}

void CourseConfig::validate() const {
  if (!(speed > 0) || !(radius > 0) || laps < 1 || scan_every < 1 || !(scan_radius > 0))
    throw ConfigError("course: speed, radius, laps, scan_every and scan_radius must be positive");
  if (std::abs(speed_swing) >= speed) throw ConfigError("course: speed swing must be below the speed");
  if (!(truth_noise >= 0)) throw ConfigError("course: truth noise scale must be non-negative");
  LandmarkMap check(landmarks);
}

std::vector<ControlRow> course_schedule(const CourseConfig& c, const VehicleParams& p) {
  c.validate();
  p.validate();
  // lap period such that the first lobe turns a full circle, then the
  // second lobe's amplitude such that it turns one back
  const double left = std::atan(p.L / c.radius);
  const double base = 2 * M_PI * c.radius / c.speed;
  const double period =
      bisect(base, 8 * base, [&](double t) { return lobe_turn(c, p, t, left, 0) < 2 * M_PI; });
  const double right = bisect(0.2 * left, std::min(3 * left, 1.2),
                              [&](double a) { return lobe_turn(c, p, period, a, 1) < 2 * M_PI; });
  const long steps = std::lround(c.laps * period / p.delta);
  std::vector<ControlRow> rows;
  rows.reserve(static_cast<std::size_t>(steps));
  for (long k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * p.delta;
    rows.push_back({t, wheel_speed(c, t, period), steering(t, period, left, right)});
  }
  return rows;
}

DriveLog gen_data(const CourseConfig& course, const VehicleParams& params, std::uint64_t seed, bool hide_ids) {
  DriveLog log;
  log.delta = params.delta;
  log.landmarks = course.landmarks;
  log.controls = course_schedule(course, params);
  const LandmarkMap map(course.landmarks);
  VehicleParams truth_params = params;
  truth_params.p *= course.truth_noise;
  truth_params.q *= course.truth_noise;
  Rng motion = Rng::stream(seed, 0, 0, 101);
  Rng laser = Rng::stream(seed, 0, 0, 102);
  Eigen::Vector3d pose = course.start;
  log.truth.push_back({0, pose[0], pose[1], pose[2]});
  for (std::size_t k = 0; k < log.controls.size(); ++k) {
    const ControlRow& u = log.controls[k];
    pose = course.truth_noise > 0 ? propagate(pose, u.v_l, u.alpha, truth_params, motion)
                                  : propagate(pose, u.v_l, u.alpha, params, Eigen::Vector3d::Zero());
    const double t = static_cast<double>(k + 1) * params.delta;
    log.truth.push_back({t, pose[0], pose[1], pose[2]});
    if ((k + 1) % static_cast<std::size_t>(course.scan_every) != 0) continue;
    const auto o = synthetic_scan(pose, map, params, laser, course.scan_radius);
    if (o) log.scans.push_back({t, hide_ids ? -1 : o->id, o->z[0], o->z[1]});
  }
  return log;
}

void write_log(std::ostream& out, const DriveLog& log) {
  const auto f = format_double;
  out << "kind,t,id,a,b,c\n";
  out << "delta,,," << f(log.delta) << ",,\n";
  for (const Landmark& l : log.landmarks)
    out << "landmark,," << l.id << ',' << f(l.position[0]) << ',' << f(l.position[1]) << ",\n";
  for (const ControlRow& r : log.controls) out << "control," << f(r.t) << ",," << f(r.v_l) << ',' << f(r.alpha) << ",\n";
  for (const ScanRow& r : log.scans)
    out << "scan," << f(r.t) << ',' << r.id << ',' << f(r.range) << ',' << f(r.bearing) << ",\n";
  for (const TruthRow& r : log.truth)
    out << "truth," << f(r.t) << ",," << f(r.x) << ',' << f(r.y) << ',' << f(r.beta) << '\n';
}

DriveLog read_log(std::istream& in) {
  DriveLog log;
  std::string line;
  if (!std::getline(in, line) || line != "kind,t,id,a,b,c") throw ConfigError("drive log: missing header");
  int lineno = 1;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const std::vector<std::string> c = split(line);
      if (c.size() != 6) throw ConfigError("expected 6 columns");
      const std::string& kind = c[0];
      if (kind == "delta") {
        log.delta = to_double(c[3]);
      } else if (kind == "landmark") {
        log.landmarks.push_back({std::stoi(c[2]), {to_double(c[3]), to_double(c[4])}});
      } else if (kind == "control") {
        log.controls.push_back({to_double(c[1]), to_double(c[3]), to_double(c[4])});
      } else if (kind == "scan") {
        log.scans.push_back({to_double(c[1]), std::stoi(c[2]), to_double(c[3]), to_double(c[4])});
      } else if (kind == "truth") {
        log.truth.push_back({to_double(c[1]), to_double(c[3]), to_double(c[4]), to_double(c[5])});
      } else {
        throw ConfigError("unknown row kind " + kind);
      }
    }
  } catch (const std::exception& e) {
    throw ConfigError("drive log line " + std::to_string(lineno) + ": " + e.what());
  }
  for (std::size_t i = 1; i < log.controls.size(); ++i)
    if (log.controls[i].t < log.controls[i - 1].t) throw ConfigError("drive log: control times decrease");
  return log;
}

std::vector<std::optional<ScanRow>> scans_by_step(const DriveLog& log) {
  std::vector<std::optional<ScanRow>> out(log.controls.size());
  for (const ScanRow& s : log.scans) {
    const long k = std::lround(s.t / log.delta) - 1;
    if (k < 0 || k >= static_cast<long>(out.size())) throw ConfigError("drive log: scan outside the control span");
    out[static_cast<std::size_t>(k)] = s;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<Vector> truth_after_steps(const DriveLog& log) {
  if (log.truth.size() != log.controls.size() + 1) throw ConfigError("drive log: need one truth row per step plus start");
  std::vector<Vector> out;
  for (std::size_t k = 1; k < log.truth.size(); ++k) out.push_back(Eigen::Vector2d(log.truth[k].x, log.truth[k].y));
  return out;
}

Vector start_pose(const DriveLog& log) {
  if (log.truth.empty()) throw ConfigError("drive log: no truth rows");
  return Eigen::Vector3d(log.truth[0].x, log.truth[0].y, log.truth[0].beta);
}

template <class Step, class Estimate>
void drive(const DriveLog& log, bool timing, RunRecord& rec, FilterTrace* trace, Step step, Estimate estimate_now) {
  const auto scans = scans_by_step(log);
  const std::vector<Vector> truth = truth_after_steps(log);
  std::vector<Vector> est;
  est.reserve(truth.size());
  double ms = 0;
  for (std::size_t k = 0; k < log.controls.size(); ++k) {
    const Vector u = Eigen::Vector2d(log.controls[k].v_l, log.controls[k].alpha);
    const auto t0 = Clock::now();
    step(u, scans[k]);
    if (timing) ms += ms_since(t0);
    const Vector e = estimate_now();
    est.push_back(e.head(2));
    if (trace) trace->estimates.push_back(e.head<3>());
  }
  rec.error_pct = 100 * trajectory_error(est, truth);
  rec.cpu_ms = log.controls.empty() ? 0 : ms / static_cast<double>(log.controls.size());
}

const char* name_of(MclMethod m) { return m == MclMethod::Implicit ? "implicit" : "standard"; }

const char* name_of(SlamMethod m) {
  switch (m) {
    case SlamMethod::Implicit: return "implicit";
    case SlamMethod::FastSlam: return "fastslam";
    case SlamMethod::Ekf: return "ekf";
  }
  return "";
}

}  // namespace

RunRecord run_mcl(const DriveLog& log, const VehicleParams& params, MclMethod method, int samples,
                  std::uint64_t seed, bool timing, FilterTrace* trace) {
  RunRecord rec = make_record(name_of(method), samples, seed);
  MclConfig cfg;
  cfg.particles = samples;
  cfg.method = method;
  cfg.seed = seed;
  const FilterModel model = vehicle_model(params);
  const Matrix start_cov = Eigen::Vector3d(0.1 * 0.1, 0.1 * 0.1, 0.01 * 0.01).asDiagonal();
  MclFilter f(model, LandmarkMap(log.landmarks), cfg, initial_particles(start_pose(log), start_cov, samples, seed));
  drive(
      log, timing, rec, trace,
      [&](const Vector& u, const std::optional<ScanRow>& s) {
        std::vector<Observation> obs;
        if (s) {
          if (s->id < 0) throw ConfigError("mcl: the log hides landmark ids");
          obs.push_back({s->id, Eigen::Vector2d(s->range, s->bearing)});
        }
        f.step(u, obs);
      },
      [&] { return f.estimate(); });
  rec.metric_a = f.fallbacks();
  return rec;
}

RunRecord run_slam(const DriveLog& log, const VehicleParams& params, SlamMethod method, int samples,
                   std::uint64_t seed, bool timing, FilterTrace* trace) {
  RunRecord rec = make_record(name_of(method), method == SlamMethod::Ekf ? 0 : samples, seed);
  const FilterModel model = vehicle_model(params);
  auto scan_z = [](const std::optional<ScanRow>& s) -> std::optional<Eigen::Vector2d> {
    if (!s) return std::nullopt;
    return Eigen::Vector2d(s->range, s->bearing);
  };
  if (method == SlamMethod::Ekf) {
    EkfSlam f(model, start_pose(log), Matrix::Zero(3, 3));
    drive(
        log, timing, rec, trace, [&](const Vector& u, const std::optional<ScanRow>& s) { f.step(u, scan_z(s)); },
        [&] { return f.pose(); });
    rec.metric_a = f.repairs();
    rec.metric_b = static_cast<double>(f.features());
    return rec;
  }
  SlamConfig cfg;
  cfg.particles = samples;
  cfg.method = method;
  cfg.seed = seed;
  ParticleSlam f(model, cfg, start_pose(log));
  drive(
      log, timing, rec, trace, [&](const Vector& u, const std::optional<ScanRow>& s) { f.step(u, scan_z(s)); },
      [&] { return f.estimate(); });
  rec.metric_a = f.fallbacks();
  double feats = 0;
  for (const SlamParticle& p : f.particles()) feats += static_cast<double>(p.features.size());
  rec.metric_b = feats / static_cast<double>(f.particles().size());
  return rec;
}

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& runs) {
  std::vector<SummaryRow> rows;
  std::vector<std::vector<const RunRecord*>> groups;
  for (const RunRecord& r : runs) {
    std::size_t g = 0;
    while (g < rows.size() && !(rows[g].method == r.method && rows[g].samples == r.samples)) ++g;
    if (g == rows.size()) {
      rows.push_back({r.method, r.samples});
      groups.emplace_back();
    }
    groups[g].push_back(&r);
  }
  for (std::size_t g = 0; g < rows.size(); ++g) {
    SummaryRow& row = rows[g];
    double sum = 0, sq = 0, cpu = 0;
    int n = 0;
    for (const RunRecord* r : groups[g]) {
      ++row.runs;
      if (!r->ok) {
        ++row.failed;
        continue;
      }
      ++n;
      sum += r->error_pct;
      cpu += r->cpu_ms;
    }
    if (n == 0) {
      row.mean_error_pct = row.std_error_pct = row.mean_cpu_ms = std::nan("");
      continue;
    }
    row.mean_error_pct = sum / n;
    row.mean_cpu_ms = cpu / n;
    for (const RunRecord* r : groups[g])
      if (r->ok) sq += (r->error_pct - row.mean_error_pct) * (r->error_pct - row.mean_error_pct);
    row.std_error_pct = n > 1 ? std::sqrt(sq / (n - 1)) : 0;
  }
  return rows;
}

void write_summary(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "method,samples,mean_error_pct,std_error_pct,mean_cpu_ms,runs,failed\n";
  for (const SummaryRow& r : rows)
    out << r.method << ',' << r.samples << ',' << format_double(r.mean_error_pct) << ','
        << format_double(r.std_error_pct) << ',' << format_double(r.mean_cpu_ms) << ',' << r.runs << ',' << r.failed
        << '\n';
}

std::vector<SummaryRow> read_summary(std::istream& in) {
  std::string line;
  std::getline(in, line);
  if (line != "method,samples,mean_error_pct,std_error_pct,mean_cpu_ms,runs,failed")
    throw ConfigError("summary: unexpected header");
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split(line);
    if (c.size() != 7) throw ConfigError("summary: expected 7 columns");
    rows.push_back({c[0], std::stoi(c[1]), to_double(c[2]), to_double(c[3]), to_double(c[4]), std::stoi(c[5]),
                    std::stoi(c[6])});
  }
  return rows;
}

void write_runs(std::ostream& out, const std::vector<RunRecord>& runs) {
  out << "method,samples,seed,status,error_pct,cpu_ms,metric_a,metric_b,message\n";
  for (const RunRecord& r : runs)
    out << r.method << ',' << r.samples << ',' << r.seed << ',' << (r.ok ? "ok" : "failed") << ','
        << format_double(r.error_pct) << ',' << format_double(r.cpu_ms) << ',' << format_double(r.metric_a) << ','
        << format_double(r.metric_b) << ',' << clean(r.message) << '\n';
}

std::vector<RunRecord> read_runs(std::istream& in) {
  std::string line;
  std::getline(in, line);
  if (line != "method,samples,seed,status,error_pct,cpu_ms,metric_a,metric_b,message")
    throw ConfigError("runs: unexpected header");
  std::vector<RunRecord> runs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split(line);
    if (c.size() != 9) throw ConfigError("runs: expected 9 columns");
    RunRecord r;
    r.method = c[0];
    r.samples = std::stoi(c[1]);
    r.seed = std::stoull(c[2]);
    r.ok = c[3] == "ok";
    r.error_pct = to_double(c[4]);
    r.cpu_ms = to_double(c[5]);
    r.metric_a = to_double(c[6]);
    r.metric_b = to_double(c[7]);
    r.message = c[8];
    runs.push_back(r);
  }
  return runs;
}

// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string> kExperiments = {"gen-data", "double-slit", "arm", "himmelblau", "mcl", "slam"};

std::vector<std::string> allowed_methods(const std::string& e) {
  if (e == "double-slit") return {"implicit"};
  if (e == "arm") return {"true-model", "false-model"};
  if (e == "himmelblau") return {"random-map", "quadratic-map"};
  if (e == "mcl") return {"implicit", "standard"};
  if (e == "slam") return {"implicit", "fastslam", "ekf"};
  return {"none"};
}

std::vector<std::uint64_t> seed_range(int n) {
  std::vector<std::uint64_t> s;
  for (int i = 0; i < n; ++i) s.push_back(static_cast<std::uint64_t>(i));
  return s;
}

}  // namespace

void ExperimentConfig::finalize() {
  if (std::find(kExperiments.begin(), kExperiments.end(), experiment) == kExperiments.end())
    throw ConfigError("unknown experiment '" + experiment + "'");
  const std::vector<std::string> allowed = allowed_methods(experiment);
  if (methods.empty()) methods = experiment == "himmelblau" ? std::vector<std::string>{"random-map"} : allowed;
  for (const std::string& m : methods)
    if (std::find(allowed.begin(), allowed.end(), m) == allowed.end())
      throw ConfigError("method '" + m + "' does not apply to " + experiment);
  if (samples.empty()) {
    if (experiment == "mcl") samples = {10, 20, 40, 80, 100, 150};
    else if (experiment == "slam") samples = {10, 20, 50, 100, 200, 500};
    else if (experiment == "arm" || experiment == "gen-data") samples = {0};
    else samples = {50};
  }
  for (int m : samples)
    if (m < 1 && experiment != "arm" && experiment != "gen-data") throw ConfigError("samples must be positive");
  if (seeds.empty()) {
    if (experiment == "double-slit") seeds = seed_range(100);
    else if (experiment == "slam" || experiment == "himmelblau") seeds = seed_range(50);
    else seeds = seed_range(20);
  }
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (out.empty()) throw ConfigError("output directory must be set");
  course.validate();
  vehicle.validate();
  slit.validate();
}

namespace {

using nlohmann::json;

template <class T>
void take(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

void check_keys(const json& j, const std::vector<std::string>& keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <int N>
void take_vec(const json& j, const char* key, Eigen::Matrix<double, N, 1>& into) {
  if (!j.contains(key)) return;
  const std::vector<double> v = j.at(key).get<std::vector<double>>();
  if (static_cast<int>(v.size()) != N) throw ConfigError(std::string(key) + ": expected " + std::to_string(N) + " values");
  for (int i = 0; i < N; ++i) into[i] = v[static_cast<std::size_t>(i)];
}

void parse_arm_params(const json& j, ArmParams& p, const std::string& where) {
  check_keys(j, {"l1", "lc1", "lc2", "m1", "m2", "I1", "I2"}, where);
  take(j, "l1", p.l1);
  take(j, "lc1", p.lc1);
  take(j, "lc2", p.lc2);
  take(j, "m1", p.m1);
  take(j, "m2", p.m2);
  take(j, "I1", p.I1);
  take(j, "I2", p.I2);
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  try {
    const json j = json::parse(text);
    check_keys(j, {"experiment", "methods", "samples", "seeds", "out", "threads", "timing", "course", "vehicle", "slit",
                   "arm", "stochopt"},
               "config");
    take(j, "experiment", c.experiment);
    take(j, "methods", c.methods);
    take(j, "samples", c.samples);
    take(j, "seeds", c.seeds);
    take(j, "out", c.out);
    take(j, "threads", c.threads);
    take(j, "timing", c.timing);
    if (j.contains("course")) {
      const json& k = j.at("course");
      check_keys(k, {"speed", "speed_swing", "radius", "laps", "scan_every", "scan_radius", "truth_noise", "start", "landmarks"},
                 "course");
      take(k, "speed", c.course.speed);
      take(k, "speed_swing", c.course.speed_swing);
      take(k, "radius", c.course.radius);
      take(k, "laps", c.course.laps);
      take(k, "scan_every", c.course.scan_every);
      take(k, "scan_radius", c.course.scan_radius);
      take(k, "truth_noise", c.course.truth_noise);
      take_vec(k, "start", c.course.start);
      if (k.contains("landmarks")) {
        c.course.landmarks.clear();
        for (const json& l : k.at("landmarks")) {
          const auto v = l.get<std::vector<double>>();
          if (v.size() != 3) throw ConfigError("course.landmarks: expected [id, x, y]");
          c.course.landmarks.push_back({static_cast<int>(v[0]), {v[1], v[2]}});
        }
      }
    }
    if (j.contains("vehicle")) {
      const json& k = j.at("vehicle");
      check_keys(k, {"L", "H", "a", "b", "delta", "q", "p", "sigma_range", "sigma_bearing"}, "vehicle");
      take(k, "L", c.vehicle.L);
      take(k, "H", c.vehicle.H);
      take(k, "a", c.vehicle.a);
      take(k, "b", c.vehicle.b);
      take(k, "delta", c.vehicle.delta);
      take_vec(k, "q", c.vehicle.q);
      take_vec(k, "p", c.vehicle.p);
      take(k, "sigma_range", c.vehicle.sigma_range);
      take(k, "sigma_bearing", c.vehicle.sigma_bearing);
    }
    if (j.contains("slit")) {
      const json& k = j.at("slit");
      check_keys(k, {"t_f", "t1", "a", "b", "c", "d", "x0", "sigma", "r", "dt"}, "slit");
      take(k, "t_f", c.slit.t_f);
      take(k, "t1", c.slit.t1);
      take(k, "a", c.slit.a);
      take(k, "b", c.slit.b);
      take(k, "c", c.slit.c);
      take(k, "d", c.slit.d);
      take(k, "x0", c.slit.x0);
      take(k, "sigma", c.slit.sigma);
      take(k, "r", c.slit.r);
      take(k, "dt", c.slit.dt);
    }
    if (j.contains("arm")) {
      const json& k = j.at("arm");
      check_keys(k, {"plant", "controller", "target", "r", "t_f", "dt", "substeps", "plant_noise"}, "arm");
      if (k.contains("plant")) parse_arm_params(k.at("plant"), c.arm.plant, "arm.plant");
      if (k.contains("controller")) parse_arm_params(k.at("controller"), c.arm.controller, "arm.controller");
      take_vec(k, "target", c.arm.target);
      take(k, "r", c.arm.r);
      take(k, "t_f", c.arm.t_f);
      take(k, "dt", c.arm.dt);
      take(k, "substeps", c.arm.substeps);
      take(k, "plant_noise", c.arm.plant_noise);
    }
    if (j.contains("stochopt")) {
      const json& k = j.at("stochopt");
      check_keys(k, {"R", "sigma", "dt", "t_f", "x0"}, "stochopt");
      take(k, "R", c.stochopt.R);
      take(k, "sigma", c.stochopt.sigma);
      take(k, "dt", c.stochopt.dt);
      take(k, "t_f", c.stochopt.t_f);
      take_vec(k, "x0", c.stochopt.x0);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

int ExperimentResult::failed() const {
  return static_cast<int>(std::count_if(runs.begin(), runs.end(), [](const RunRecord& r) { return !r.ok; }));
}

// ---------------------------------------------------------------------------

namespace {

struct Task {
  std::string method;
  int samples;
  std::uint64_t seed;
};

// Runs fn(i) for i < n on `threads` workers; results land by index.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  const int extra = std::min<int>(threads, static_cast<int>(n)) - 1;
  std::vector<std::thread> pool;
  for (int t = 0; t < extra; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
}

std::ofstream open_out(const std::filesystem::path& dir, const std::string& name) {
  std::ofstream f(dir / name);
  if (!f) throw ConfigError("cannot write " + (dir / name).string());
  return f;
}

void write_plot_tables(const std::filesystem::path& dir, const std::vector<SummaryRow>& rows) {
  std::ofstream e = open_out(dir, "error_vs_samples.csv");
  e << "method,samples,mean_error_pct,std_error_pct\n";
  for (const SummaryRow& r : rows)
    e << r.method << ',' << r.samples << ',' << format_double(r.mean_error_pct) << ','
      << format_double(r.std_error_pct) << '\n';
  std::ofstream t = open_out(dir, "time_vs_error.csv");
  t << "method,samples,mean_cpu_ms,mean_error_pct\n";
  for (const SummaryRow& r : rows)
    t << r.method << ',' << r.samples << ',' << format_double(r.mean_cpu_ms) << ','
      << format_double(r.mean_error_pct) << '\n';
}

RunRecord failed_record(const Task& task, const std::string& what) {
  RunRecord r = make_record(task.method, task.samples, task.seed);
  r.ok = false;
  r.error_pct = r.cpu_ms = std::nan("");
  r.message = what;
  return r;
}

// Per-experiment runners: each returns one or more records for a task and
// may append plot rows for the first seed.
struct Extras {
  std::ostringstream trajectories;
};

std::vector<RunRecord> run_double_slit(const ExperimentConfig& c, const Task& task, bool first, Extras& extras) {
  const auto t0 = Clock::now();
  const DoubleSlitRun run = double_slit_run(c.slit, task.samples, task.seed);
  const double ms = c.timing ? ms_since(t0) / c.slit.steps() : 0;
  RunRecord x = make_record("implicit-x", task.samples, task.seed);
  RunRecord u = make_record("implicit-u", task.samples, task.seed);
  x.error_pct = 100 * run.x_error;
  u.error_pct = 100 * run.u_error;
  x.cpu_ms = u.cpu_ms = ms;
  if (first) {
    for (std::size_t k = 0; k < run.analytic.t.size(); ++k) {
      extras.trajectories << task.samples << ',' << format_double(run.analytic.t[k]) << ','
                          << format_double(run.analytic.x[k][0]) << ',' << format_double(run.numeric.x[k][0]);
      if (k < run.analytic.u.size())
        extras.trajectories << ',' << format_double(run.analytic.u[k][0]) << ',' << format_double(run.numeric.u[k][0]);
      else
        extras.trajectories << ",,";
      extras.trajectories << '\n';
    }
  }
  return {x, u};
}

std::vector<RunRecord> run_arm(const ExperimentConfig& c, const Task& task, bool first, Extras& extras) {
  ArmSpec spec = c.arm;
  if (task.method == "false-model") spec.controller.m1 = 1.4 * spec.plant.m1;
  const auto t0 = Clock::now();
  const ArmRun run = arm_closed_loop(spec, Eigen::Vector4d::Zero(), task.seed);
  RunRecord r = make_record(task.method, task.samples, task.seed);
  r.cpu_ms = c.timing ? ms_since(t0) / spec.steps() : 0;
  const Eigen::Vector4d& xf = run.x.back();
  r.metric_a = (xf.head<2>() - spec.target).norm();
  r.metric_b = xf.tail<2>().norm();
  r.error_pct = 100 * r.metric_a / spec.target.norm();
  if (first) {
    for (std::size_t k = 0; k < run.t.size(); ++k) {
      extras.trajectories << task.method << ',' << format_double(run.t[k]);
      for (int i = 0; i < 4; ++i) extras.trajectories << ',' << format_double(run.x[k][i]);
      for (int i = 0; i < 2; ++i)
        extras.trajectories << ',' << (k < run.u.size() ? format_double(run.u[k][i]) : std::string());
      for (int i = 0; i < 2; ++i)
        extras.trajectories << ',' << (k < run.tau.size() ? format_double(run.tau[k][i]) : std::string());
      extras.trajectories << '\n';
    }
  }
  return {r};
}

std::vector<RunRecord> run_himmelblau(const ExperimentConfig& c, const Task& task, bool first, Extras& extras) {
  StochOptSpec spec = c.stochopt;
  spec.samples = task.samples;
  spec.method = task.method == "quadratic-map" ? PsiMethod::QuadraticMap : PsiMethod::RandomMap;
  const auto t0 = Clock::now();
  const StochOptRun run = stochastic_optimize(spec, task.seed);
  RunRecord r = make_record(task.method, task.samples, task.seed);
  r.cpu_ms = c.timing ? ms_since(t0) / spec.steps() : 0;
  r.metric_a = run.final_f;
  r.metric_b = run.cost;
  r.error_pct = 100 * run.final_f / himmelblau(spec.x0[0], spec.x0[1]);
  if (first) {
    for (std::size_t k = 0; k < run.iterates.size(); ++k) {
      const Vector& x = run.iterates[k];
      extras.trajectories << task.method << ',' << task.samples << ',' << k << ',' << format_double(x[0]) << ','
                          << format_double(x[1]) << ',' << format_double(himmelblau(x[0], x[1])) << '\n';
    }
  }
  return {r};
}

std::vector<RunRecord> run_filter(const ExperimentConfig& c, const Task& task, bool first, Extras& extras) {
  const bool slam = c.experiment == "slam";
  const DriveLog log = gen_data(c.course, c.vehicle, task.seed, slam);
  FilterTrace trace;
  RunRecord r;
  if (slam) {
    const SlamMethod m = task.method == "implicit"   ? SlamMethod::Implicit
                         : task.method == "fastslam" ? SlamMethod::FastSlam
                                                     : SlamMethod::Ekf;
    r = run_slam(log, c.vehicle, m, task.samples, task.seed, c.timing, first ? &trace : nullptr);
  } else {
    const MclMethod m = task.method == "implicit" ? MclMethod::Implicit : MclMethod::Standard;
    r = run_mcl(log, c.vehicle, m, task.samples, task.seed, c.timing, first ? &trace : nullptr);
  }
  if (first) {
    for (std::size_t k = 0; k < trace.estimates.size(); ++k) {
      const TruthRow& t = log.truth[k + 1];
      extras.trajectories << r.method << ',' << r.samples << ',' << format_double(t.t) << ',' << format_double(t.x)
                          << ',' << format_double(t.y) << ',' << format_double(trace.estimates[k][0]) << ','
                          << format_double(trace.estimates[k][1]) << '\n';
    }
  }
  return {r};
}

void write_guided_paths(const ExperimentConfig& c, const std::filesystem::path& dir) {
  const int samples = c.samples.front();
  const PreWallEstimate fan = double_slit_sample_pre_wall(c.slit, c.slit.x0, 0, std::max(samples, 50), c.seeds.front(), true);
  std::ofstream f = open_out(dir, "guided_paths.csv");
  f << "path,step,t,x\n";
  for (std::size_t p = 0; p < fan.paths.size(); ++p)
    for (std::size_t k = 0; k < fan.paths[p].size(); ++k)
      f << p << ',' << k << ',' << format_double(static_cast<double>(k) * c.slit.dt) << ','
        << format_double(fan.paths[p][k]) << '\n';
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.finalize();
  if (c.experiment == "gen-data") throw ConfigError("gen-data is not a benchmark; use write_gen_data");
  std::vector<Task> tasks;
  for (const std::string& m : c.methods) {
    if (c.experiment == "slam" && m == "ekf") {
      for (std::uint64_t s : c.seeds) tasks.push_back({m, 0, s});
      continue;
    }
    for (int n : c.samples)
      for (std::uint64_t s : c.seeds) tasks.push_back({m, n, s});
  }
  using Runner = std::vector<RunRecord> (*)(const ExperimentConfig&, const Task&, bool, Extras&);
  Runner runner = c.experiment == "double-slit" ? run_double_slit
                  : c.experiment == "arm"       ? run_arm
                  : c.experiment == "himmelblau" ? run_himmelblau
                                                 : run_filter;
  std::vector<std::vector<RunRecord>> records(tasks.size());
  std::vector<Extras> extras(tasks.size());
  parallel_for(tasks.size(), c.threads, [&](std::size_t i) {
    const Task& t = tasks[i];
    const bool first = t.seed == c.seeds.front();
    try {
      records[i] = runner(c, t, first, extras[i]);
    } catch (const std::exception& e) {
      if (c.experiment == "double-slit")
        records[i] = {failed_record(Task{"implicit-x", t.samples, t.seed}, e.what()),
                      failed_record(Task{"implicit-u", t.samples, t.seed}, e.what())};
      else
        records[i] = {failed_record(t, e.what())};
    }
  });
  ExperimentResult result;
  for (const auto& rs : records) result.runs.insert(result.runs.end(), rs.begin(), rs.end());
  if (c.experiment == "double-slit") {
    // x rows first, then u rows
    std::stable_sort(result.runs.begin(), result.runs.end(),
                     [](const RunRecord& a, const RunRecord& b) { return a.method == "implicit-x" && b.method != "implicit-x"; });
  }
  result.summary = summarize(result.runs);

  const std::filesystem::path dir(c.out);
  std::filesystem::create_directories(dir);
  {
    std::ofstream f = open_out(dir, "runs.csv");
    write_runs(f, result.runs);
  }
  {
    std::ofstream f = open_out(dir, "summary.csv");
    write_summary(f, result.summary);
  }
  write_plot_tables(dir, result.summary);
  std::ofstream traj = open_out(dir, c.experiment == "himmelblau" ? "iterates.csv" : "trajectories.csv");
  if (c.experiment == "double-slit") traj << "samples,t,x_analytic,x_numeric,u_analytic,u_numeric\n";
  else if (c.experiment == "arm") traj << "method,t,theta1,theta2,dtheta1,dtheta2,u1,u2,tau1,tau2\n";
  else if (c.experiment == "himmelblau") traj << "method,samples,step,x1,x2,f\n";
  else traj << "method,samples,t,x_true,y_true,x_est,y_est\n";
  for (const Extras& e : extras) traj << e.trajectories.str();
  if (c.experiment == "double-slit") write_guided_paths(c, dir);
  return result;
}

void write_gen_data(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.finalize();
  const std::filesystem::path dir(c.out);
  std::filesystem::create_directories(dir);
  for (std::uint64_t s : c.seeds) {
    for (bool hide : {false, true}) {
      std::ofstream f = open_out(dir, std::string(hide ? "slam_" : "mcl_") + std::to_string(s) + ".csv");
      write_log(f, gen_data(c.course, c.vehicle, s, hide));
    }
  }
}

}  // namespace imps
