// Command line front end for the benchmark harness.
//
//   imps mcl --samples 10,100 --seeds 0-19 --out out/mcl
//   imps report --out out/mcl

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "imps/errors.hpp"
#include "imps/harness.hpp"

namespace {

struct Options {
  std::string config;
  std::string samples;
  std::string seeds;
  std::vector<std::string> methods;
  std::string out;
  int threads = 0;
  bool no_timing = false;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) parts.push_back(item);
  return parts;
}

long long parse_int(const std::string& s, const char* what) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw imps::ConfigError(std::string(what) + ": bad number '" + s + "'");
  return v;
}

// "1,2,5" or "0-19" or a mix
std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  for (const std::string& part : split_list(s)) {
    const auto dash = part.find('-', 1);
    if (dash == std::string::npos) {
      const long long v = parse_int(part, "--seeds");
      if (v < 0) throw imps::ConfigError("--seeds: negative seed");
      seeds.push_back(static_cast<std::uint64_t>(v));
      continue;
    }
    const long long lo = parse_int(part.substr(0, dash), "--seeds");
    const long long hi = parse_int(part.substr(dash + 1), "--seeds");
    if (lo < 0 || hi < lo) throw imps::ConfigError("--seeds: bad range '" + part + "'");
    for (long long v = lo; v <= hi; ++v) seeds.push_back(static_cast<std::uint64_t>(v));
  }
  if (seeds.empty()) throw imps::ConfigError("--seeds: empty list");
  return seeds;
}

std::vector<int> parse_samples(const std::string& s) {
  std::vector<int> samples;
  for (const std::string& part : split_list(s)) samples.push_back(static_cast<int>(parse_int(part, "--samples")));
  if (samples.empty()) throw imps::ConfigError("--samples: empty list");
  return samples;
}

imps::ExperimentConfig build_config(const std::string& experiment, const Options& o) {
  imps::ExperimentConfig c;
  if (!o.config.empty()) {
    std::ifstream f(o.config);
    if (!f) throw imps::ConfigError("cannot read config '" + o.config + "'");
    std::stringstream text;
    text << f.rdbuf();
    c = imps::parse_config(text.str());
    if (!c.experiment.empty() && c.experiment != experiment)
      throw imps::ConfigError("config is for '" + c.experiment + "', not '" + experiment + "'");
  }
  c.experiment = experiment;
  if (!o.samples.empty()) c.samples = parse_samples(o.samples);
  if (!o.seeds.empty()) c.seeds = parse_seeds(o.seeds);
  if (!o.methods.empty()) {
    c.methods.clear();
    for (const std::string& m : o.methods)
      for (const std::string& part : split_list(m)) c.methods.push_back(part);
  }
  if (!o.out.empty()) c.out = o.out;
  if (o.threads != 0) c.threads = o.threads;
  if (o.no_timing) c.timing = false;
  c.finalize();
  return c;
}

void print_summary(const std::vector<imps::SummaryRow>& rows) {
  std::printf("%-14s %8s %12s %12s %12s %6s %6s\n", "method", "samples", "error_pct", "std_pct", "ms/step", "runs",
              "failed");
  for (const imps::SummaryRow& r : rows)
    std::printf("%-14s %8d %12.4f %12.4f %12.4f %6d %6d\n", r.method.c_str(), r.samples, r.mean_error_pct,
                r.std_error_pct, r.mean_cpu_ms, r.runs, r.failed);
}

int run_benchmark(const std::string& experiment, const Options& o) {
  const imps::ExperimentConfig c = build_config(experiment, o);
  const imps::ExperimentResult r = imps::run_experiment(c);
  print_summary(r.summary);
  for (const imps::RunRecord& rec : r.runs)
    if (!rec.ok)
      std::fprintf(stderr, "failed: %s samples=%d seed=%llu: %s\n", rec.method.c_str(), rec.samples,
                   static_cast<unsigned long long>(rec.seed), rec.message.c_str());
  std::printf("wrote %s\n", c.out.c_str());
  return r.failed() > 0 ? 2 : 0;
}

int run_gen_data(const Options& o) {
  const imps::ExperimentConfig c = build_config("gen-data", o);
  imps::write_gen_data(c);
  std::printf("wrote %zu logs to %s\n", 2 * c.seeds.size(), c.out.c_str());
  return 0;
}

int run_report(const Options& o) {
  const std::filesystem::path dir(o.out.empty() ? "out" : o.out);
  std::ifstream f(dir / "runs.csv");
  if (!f) throw imps::ConfigError("cannot read " + (dir / "runs.csv").string());
  const std::vector<imps::RunRecord> runs = imps::read_runs(f);
  const auto rows = imps::summarize(runs);
  print_summary(rows);
  std::ofstream s(dir / "summary.csv");
  imps::write_summary(s, rows);
  int failed = 0;
  for (const imps::RunRecord& r : runs) failed += r.ok ? 0 : 1;
  return failed > 0 ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Implicit sampling benchmarks"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::string> benchmarks = {"double-slit", "arm", "himmelblau", "mcl", "slam"};
  std::vector<CLI::App*> subs;
  for (const std::string& name : benchmarks) subs.push_back(app.add_subcommand(name, "run the " + name + " benchmark"));
  CLI::App* gen = app.add_subcommand("gen-data", "write synthetic drive logs");
  CLI::App* report = app.add_subcommand("report", "re-summarize runs.csv in --out");
  subs.push_back(gen);
  for (CLI::App* s : subs) {
    s->add_option("--config", o.config, "JSON config file");
    s->add_option("--samples", o.samples, "sample counts, e.g. 10,100");
    s->add_option("--seeds", o.seeds, "seeds, e.g. 0-19 or 1,4,9");
    s->add_option("--method", o.methods, "method name (repeatable or comma separated)");
    s->add_option("--out", o.out, "output directory");
    s->add_option("--threads", o.threads, "worker threads");
    s->add_flag("--no-timing", o.no_timing, "skip per-step timing (cpu_ms = 0)");
  }
  report->add_option("--out", o.out, "directory holding runs.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(o);
    if (report->parsed()) return run_report(o);
    for (std::size_t i = 0; i < benchmarks.size(); ++i)
      if (subs[i]->parsed()) return run_benchmark(benchmarks[i], o);
  } catch (const imps::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
