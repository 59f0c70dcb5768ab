#pragma once

// Command-line front end. Kept in a header so the tests can drive it without
// spawning a process.

#include <CLI11.hpp>
#include <json.hpp>

#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dualcbf/braking.hpp"
#include "dualcbf/distance.hpp"
#include "dualcbf/scenario.hpp"
#include "dualcbf/sim.hpp"
#include "dualcbf/trace.hpp"

namespace dualcbf::cli {

enum ExitCode { kOk = 0, kConfig = 1, kSafety = 2, kSolver = 3 };

/// "SafetyViolated" -> "safety_violated".
inline std::string snake(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (std::isupper(static_cast<unsigned char>(c))) {
      if (!out.empty()) out += '_';
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else {
      out += c;
    }
  }
  return out;
}

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::SafetyViolated: return kSafety;
    case ErrorCode::SolverFailure:
    case ErrorCode::DualMismatch:
    case ErrorCode::DualDegenerate:
    case ErrorCode::NotPsd: return kSolver;
    default: return kConfig;
  }
}

inline int fail(std::ostream& err, const std::string& code, const std::string& what, int exit_code) {
  err << "ERROR:" << code << ": " << what << '\n';
  return exit_code;
}

inline void write_trace(const Trace& trace, const std::string& path, bool timing) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Config, "cannot write '" + path + "'");
  write_csv(f, trace, timing);
}

inline nlohmann::json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline nlohmann::json distance_json(const DistanceResult& r) {
  nlohmann::json j;
  j["h"] = r.h;
  j["zi"] = vec_json(r.zi);
  j["zj"] = vec_json(r.zj);
  j["sstar"] = vec_json(r.sstar);
  j["lam_i"] = vec_json(r.lam_i);
  j["lam_j"] = vec_json(r.lam_j);
  j["act_i"] = std::vector<long>(r.act_i.begin(), r.act_i.end());
  j["act_j"] = std::vector<long>(r.act_j.begin(), r.act_j.end());
  return j;
}

struct Options {
  std::string scenario;
  std::string out;
  std::optional<double> dt;
  std::optional<double> duration;
  std::vector<int> pair;
  bool timing = false;
};

inline int run_simulate(const ScenarioConfig& cfg, const Options& o, std::ostream& out) {
  if (cfg.kind == ScenarioKind::Sofa) {
    SofaScenario sc = cfg.sofa;
    if (o.dt) sc.dt = *o.dt;
    if (o.duration) sc.duration = *o.duration;
    const auto res = run_sofa(sc);
    write_trace(res.trace, o.out, o.timing);
    nlohmann::json s;
    s["rows"] = res.trace.rows.size();
    s["min_h"] = res.min_h;
    s["V0"] = res.V0;
    s["V_final"] = res.V_final;
    s["deadlock"] = res.deadlock;
    s["filter_variables"] = res.filter_variables;
    s["max_filter_constraints"] = res.max_filter_constraints;
    if (o.timing) s["mean_step_ms"] = res.mean_step_ms;
    out << s.dump() << '\n';
    return kOk;
  }
  CentralizedScenario sc = cfg.centralized;
  if (o.dt) sc.dt = *o.dt;
  if (o.duration) sc.duration = *o.duration;
  const auto res = run_centralized(sc);
  write_trace(res.trace, o.out, o.timing);
  nlohmann::json s;
  s["rows"] = res.trace.rows.size();
  s["min_sqrt_rho"] = std::sqrt(res.min_rho);
  s["min_sqrt_h"] = std::sqrt(res.min_h);
  s["max_speed"] = res.max_speed;
  s["braking_events"] = res.braking_events;
  s["braking_steps"] = res.braking_steps;
  out << s.dump() << '\n';
  return kOk;
}

inline int run_distance(const ScenarioConfig& cfg, const Options& o, std::ostream& out) {
  const long n = static_cast<long>(cfg.bodies.size());
  const int i = o.pair.at(0), j = o.pair.at(1);
  if (i < 0 || j < 0 || i >= n || j >= n || i == j)
    throw Error(ErrorCode::Config, "--pair needs two distinct body indices below " + std::to_string(n));
  const auto& bi = cfg.bodies[static_cast<size_t>(i)];
  const auto& bj = cfg.bodies[static_cast<size_t>(j)];
  const auto r = min_distance_dual(place(bi.shape, bi.pose), place(bj.shape, bj.pose));
  out << distance_json(r).dump() << '\n';
  return kOk;
}

/// Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Duality-based barrier-function safety filters for convex polytopes"};
  app.require_subcommand(1);
  Options o;

  auto* sim = app.add_subcommand("simulate", "Run a scenario and write its trace as CSV");
  sim->add_option("--scenario", o.scenario, "Scenario JSON file")->required();
  sim->add_option("--out", o.out, "Output CSV path")->required();
  sim->add_option("--dt", o.dt, "Override the time step (s)");
  sim->add_option("--duration", o.duration, "Override the duration (s)");
  sim->add_flag("--timing", o.timing, "Record wall-clock solve times in the CSV");

  auto* dist = app.add_subcommand("distance", "Print the dual distance result for one body pair as JSON");
  dist->add_option("--scenario", o.scenario, "Scenario JSON file")->required();
  dist->add_option("--pair", o.pair, "Body indices i j")->required()->expected(2);

  auto* brake = app.add_subcommand("brake-sim", "Run a centralized fleet scenario with the braking supervisor");
  brake->add_option("--scenario", o.scenario, "Scenario JSON file")->required();
  brake->add_option("--out", o.out, "Output CSV path")->required();
  brake->add_option("--dt", o.dt, "Override the time step (s)");
  brake->add_option("--duration", o.duration, "Override the duration (s)");
  brake->add_flag("--timing", o.timing, "Record wall-clock solve times in the CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    return fail(err, "config", e.what(), kConfig);
  }

  try {
    if (o.dt && !(*o.dt > 0)) throw Error(ErrorCode::Config, "--dt must be positive");
    if (o.duration && *o.duration < 0) throw Error(ErrorCode::Config, "--duration must be non-negative");
    const ScenarioConfig cfg = load_scenario(o.scenario);
    if (*sim) return run_simulate(cfg, o, out);
    if (*dist) return run_distance(cfg, o, out);
    if (cfg.kind != ScenarioKind::Centralized)
      throw Error(ErrorCode::Config, "brake-sim needs a centralized scenario");
    return run_simulate(cfg, o, out);
  } catch (const Error& e) {
    return fail(err, snake(to_string(e.code())), e.what(), exit_code_for(e.code()));
  } catch (const std::exception& e) {
    return fail(err, "solver_failure", e.what(), kSolver);
  }
}

}  // namespace dualcbf::cli
