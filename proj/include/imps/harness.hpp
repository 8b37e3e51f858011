#ifndef IMPS_HARNESS_HPP
#define IMPS_HARNESS_HPP

// Synthetic drive logs, experiment configuration, seeded benchmark runs and
// the CSV tables they produce.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "imps/control_problems.hpp"
#include "imps/mcl.hpp"
#include "imps/slam.hpp"
#include "imps/vehicle.hpp"

namespace imps {

/// Figure-eight course: two tangent circular lobes driven once per lap.
struct CourseConfig {
  double speed = 3;        // mean rear-left wheel speed, m/s
  double speed_swing = 0.5;
  double radius = 10;      // lobe radius, m
  int laps = 1;
  int scan_every = 8;      // control steps between laser returns
  double scan_radius = 15;
  /// Scale on the model's P and Q when simulating the true path; the
  /// filters always use the unscaled model.
  double truth_noise = 0.5;
  Eigen::Vector3d start{-3.5, 0, 0};
  std::vector<Landmark> landmarks = default_landmarks();

  /// 12 landmarks around the course, inside a 40 m x 40 m square.
  static std::vector<Landmark> default_landmarks();
  void validate() const;
};

struct ControlRow {
  double t = 0;
  double v_l = 0;
  double alpha = 0;
};

/// id is -1 when identities are hidden.
struct ScanRow {
  double t = 0;
  int id = -1;
  double range = 0;
  double bearing = 0;
};

struct TruthRow {
  double t = 0;
  double x = 0, y = 0, beta = 0;
};

/// Control k acts on [t_k, t_k + delta]; truth rows start at t = 0 and scans
/// are taken at the truth time they carry.
struct DriveLog {
  double delta = 0.025;
  std::vector<Landmark> landmarks;
  std::vector<ControlRow> controls;
  std::vector<ScanRow> scans;
  std::vector<TruthRow> truth;
};

/// Steering and speed schedule of the course (no noise).
std::vector<ControlRow> course_schedule(const CourseConfig& course, const VehicleParams& params);

DriveLog gen_data(const CourseConfig& course, const VehicleParams& params, std::uint64_t seed, bool hide_ids);

/// Sectioned CSV with 17 significant digits.
void write_log(std::ostream& out, const DriveLog& log);
DriveLog read_log(std::istream& in);

/// Scan (if any) observed after each control step.
std::vector<std::optional<ScanRow>> scans_by_step(const DriveLog& log);

// ---------------------------------------------------------------------------

struct RunRecord {
  std::string method;
  int samples = 0;
  std::uint64_t seed = 0;
  bool ok = true;
  double error_pct = 0;
  double cpu_ms = 0;  // mean wall clock per step
  /// Experiment-specific extras (see README).
  double metric_a = 0;
  double metric_b = 0;
  std::string message;
};

struct SummaryRow {
  std::string method;
  int samples = 0;
  double mean_error_pct = 0;
  double std_error_pct = 0;
  double mean_cpu_ms = 0;
  int runs = 0;
  int failed = 0;
};

struct FilterTrace {
  std::vector<Eigen::Vector3d> estimates;  // one per control step
};

/// One filter over a log; error is the trajectory error in percent.
RunRecord run_mcl(const DriveLog& log, const VehicleParams& params, MclMethod method, int samples,
                  std::uint64_t seed, bool timing, FilterTrace* trace = nullptr);
RunRecord run_slam(const DriveLog& log, const VehicleParams& params, SlamMethod method, int samples,
                   std::uint64_t seed, bool timing, FilterTrace* trace = nullptr);

/// Groups by (method, samples) in first-appearance order; failed runs are
/// counted but excluded from the means.
std::vector<SummaryRow> summarize(const std::vector<RunRecord>& runs);

void write_summary(std::ostream& out, const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> read_summary(std::istream& in);
void write_runs(std::ostream& out, const std::vector<RunRecord>& runs);
std::vector<RunRecord> read_runs(std::istream& in);

/// Shortest text that reads back to the same double (17 significant digits).
std::string format_double(double v);

// ---------------------------------------------------------------------------

/// Vehicle used by the benchmarks: the default model with the steering-rate
/// noise taken in degrees (0.5 deg/sqrt(s)), like the heading entry of Q.
VehicleParams benchmark_vehicle();

struct ExperimentConfig {
  std::string experiment;  // gen-data, double-slit, arm, himmelblau, mcl, slam
  std::vector<std::string> methods;
  std::vector<int> samples;
  std::vector<std::uint64_t> seeds;
  std::string out = "out";
  int threads = 1;
  bool timing = true;
  CourseConfig course;
  VehicleParams vehicle = benchmark_vehicle();
  DoubleSlitSpec slit;
  ArmSpec arm;
  StochOptSpec stochopt;

  /// Fills empty methods/samples/seeds with the experiment defaults and
  /// throws ConfigError on anything invalid.
  void finalize();
};

/// Reads a JSON config; unknown keys are rejected.
ExperimentConfig parse_config(const std::string& json_text);

struct ExperimentResult {
  std::vector<RunRecord> runs;
  std::vector<SummaryRow> summary;
  int failed() const;
};

/// Runs every (method, samples, seed) tuple and writes the CSVs into
/// config.out. Output is independent of config.threads.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Writes one drive log per seed (and the MCL variant with true ids).
void write_gen_data(const ExperimentConfig& config);

}  // namespace imps

#endif  // IMPS_HARNESS_HPP
