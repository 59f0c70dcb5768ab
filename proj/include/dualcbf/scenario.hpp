#pragma once

/**
 * @file
 * @brief JSON scenario files.
 *
 * Two kinds exist: "sofa" (planar bodies, one of which may be a rigid sofa
 * made of several arms) and "centralized" (a fleet of 3D robots). Every
 * object is checked for unknown keys before anything is built. Polytopes are
 * written as {"A": [[...]], "b": [...]}.
 */

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dualcbf/errors.hpp"
#include "dualcbf/geometry.hpp"
#include "dualcbf/sim.hpp"

namespace dualcbf {

using Json = nlohmann::json;

enum class ScenarioKind { Sofa, Centralized };

struct ScenarioBody {
  std::string name;
  /// "static" or "sofa-arm" for planar scenes, "robot" for fleets.
  std::string kind;
  Polytope shape;
  Pose pose;
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::Sofa;
  /// Bodies at their initial placement, in declaration order.
  std::vector<ScenarioBody> bodies;
  SofaScenario sofa;
  CentralizedScenario centralized;
  unsigned long seed = 0;
};

namespace detail {

inline Error config_error(const std::string& what) { return Error(ErrorCode::Config, what); }

inline void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw config_error(where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw config_error(where + ": unknown key '" + k + "'");
}

inline const Json& require(const Json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw config_error(where + ": missing key '" + key + "'");
  return j.at(key);
}

inline double number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw config_error(where + ": expected a number");
  return j.get<double>();
}

inline double number_or(const Json& j, const std::string& key, double fallback, const std::string& where) {
  return j.contains(key) ? number(j.at(key), where + "." + key) : fallback;
}

inline VectorXd vector_of(const Json& j, const std::string& where, Index expect = -1) {
  if (!j.is_array()) throw config_error(where + ": expected an array");
  VectorXd v(static_cast<Index>(j.size()));
  for (size_t k = 0; k < j.size(); ++k) v(static_cast<Index>(k)) = number(j[k], where);
  if (expect >= 0 && v.size() != expect)
    throw config_error(where + ": expected " + std::to_string(expect) + " entries");
  return v;
}

inline MatrixXd matrix_of(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw config_error(where + ": expected a non-empty array of rows");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = vector_of(j[0], where).size();
  MatrixXd M(rows, cols);
  for (Index r = 0; r < rows; ++r) M.row(r) = vector_of(j[static_cast<size_t>(r)], where, cols).transpose();
  return M;
}

inline Polytope polytope_of(const Json& j, const std::string& where) {
  const MatrixXd A = matrix_of(require(j, "A", where), where + ".A");
  const VectorXd b = vector_of(require(j, "b", where), where + ".b");
  return make_polytope(A, b);
}

inline Pose planar_pose(const Json& j, const std::string& where) {
  check_keys(j, {"p", "theta"}, where);
  const VectorXd p = j.contains("p") ? vector_of(j.at("p"), where + ".p", 2) : VectorXd::Zero(2);
  return Pose::planar(p(0), p(1), number_or(j, "theta", 0.0, where));
}

inline ControllerConfig controller_of(const Json& j, const std::string& where) {
  check_keys(j, {"eps1", "eps2", "M", "gamma", "Q", "u_min", "u_max"}, where);
  ControllerConfig c;
  c.eps1 = number_or(j, "eps1", c.eps1, where);
  c.eps2 = number_or(j, "eps2", c.eps2, where);
  c.M = number_or(j, "M", c.M, where);
  c.gamma = number_or(j, "gamma", c.gamma, where);
  if (j.contains("Q")) c.Q = vector_of(j.at("Q"), where + ".Q", 2).asDiagonal();
  if (j.contains("u_min")) c.u_min = vector_of(j.at("u_min"), where + ".u_min", 2);
  if (j.contains("u_max")) c.u_max = vector_of(j.at("u_max"), where + ".u_max", 2);
  if (!(c.eps1 > 0 && c.eps2 > 0 && c.M > 0 && c.gamma > 0)) throw config_error(where + ": values must be positive");
  return c;
}

inline void parse_sim(const Json& j, const std::string& where, double& dt, double& duration, unsigned long& seed,
                      std::vector<double>* force) {
  if (force) check_keys(j, {"dt", "duration", "seed", "force_infeasible"}, where);
  else check_keys(j, {"dt", "duration", "seed"}, where);
  dt = number_or(j, "dt", dt, where);
  duration = number_or(j, "duration", duration, where);
  if (j.contains("seed")) seed = static_cast<unsigned long>(number(j.at("seed"), where + ".seed"));
  if (force && j.contains("force_infeasible")) {
    const VectorXd f = vector_of(j.at("force_infeasible"), where + ".force_infeasible");
    force->assign(f.data(), f.data() + f.size());
  }
  if (!(dt > 0) || duration < 0) throw config_error(where + ": dt must be positive and duration non-negative");
}

inline void parse_sofa(const Json& root, ScenarioConfig& cfg) {
  check_keys(root, {"kind", "description", "bodies", "start", "controller", "clf", "sim"}, "scenario");
  auto& sc = cfg.sofa;
  if (root.contains("start")) {
    const auto& s = root.at("start");
    check_keys(s, {"z1", "z2", "theta"}, "start");
    sc.start = {number_or(s, "z1", 0, "start"), number_or(s, "z2", 0, "start"), number_or(s, "theta", 0, "start")};
  }
  const Pose sofa_pose = Pose::planar(sc.start.z1, sc.start.z2, sc.start.theta);
  const auto& bodies = require(root, "bodies", "scenario");
  if (!bodies.is_array()) throw config_error("bodies: expected an array");
  for (size_t k = 0; k < bodies.size(); ++k) {
    const std::string where = "bodies[" + std::to_string(k) + "]";
    const auto& b = bodies[k];
    check_keys(b, {"name", "kind", "A", "b", "pose"}, where);
    ScenarioBody body{b.value("name", "body" + std::to_string(k)), b.value("kind", "static"),
                      polytope_of(b, where), Pose::identity(2)};
    if (body.shape.dim() != 2) throw config_error(where + ": sofa scenarios are planar");
    if (body.kind == "sofa-arm") {
      if (b.contains("pose")) throw config_error(where + ": sofa arms are placed by 'start'");
      body.pose = sofa_pose;
      sc.arms.push_back(body.shape);
    } else if (body.kind == "static") {
      if (b.contains("pose")) body.pose = planar_pose(b.at("pose"), where + ".pose");
      // Walls are stored in world coordinates.
      const PlacedHRep w = place(body.shape, body.pose);
      sc.walls.push_back(make_polytope(w.Abar, w.bbar));
    } else {
      throw config_error(where + ": unknown body kind '" + body.kind + "'");
    }
    cfg.bodies.push_back(std::move(body));
  }
  // Arms first, then walls, matching the trace's pair numbering.
  std::stable_partition(cfg.bodies.begin(), cfg.bodies.end(),
                        [](const ScenarioBody& b) { return b.kind == "sofa-arm"; });
  if (root.contains("controller")) sc.controller = controller_of(root.at("controller"), "controller");
  if (root.contains("clf")) {
    const auto& c = root.at("clf");
    check_keys(c, {"enabled", "goal", "theta", "k", "alpha1", "slack_weight"}, "clf");
    if (c.contains("enabled")) {
      if (!c.at("enabled").is_boolean()) throw config_error("clf.enabled: expected a boolean");
      sc.use_clf = c.at("enabled").get<bool>();
    }
    if (c.contains("goal")) sc.clf.zd = vector_of(c.at("goal"), "clf.goal", 2);
    sc.clf.theta_d = number_or(c, "theta", sc.clf.theta_d, "clf");
    sc.clf.k = number_or(c, "k", sc.clf.k, "clf");
    sc.clf.alpha1 = number_or(c, "alpha1", sc.clf.alpha1, "clf");
    sc.clf.slack_weight = number_or(c, "slack_weight", sc.clf.slack_weight, "clf");
  }
  if (root.contains("sim")) parse_sim(root.at("sim"), "sim", sc.dt, sc.duration, cfg.seed, nullptr);
}

inline BrakingLimits limits_of(const Json& j, const std::string& where) {
  check_keys(j, {"a_max", "w_max", "v_max"}, where);
  BrakingLimits l;
  l.a_max = number_or(j, "a_max", l.a_max, where);
  l.w_max = number_or(j, "w_max", l.w_max, where);
  l.v_max = number_or(j, "v_max", l.v_max, where);
  if (!(l.a_max > 0 && l.w_max > 0 && l.v_max > 0)) throw config_error(where + ": limits must be positive");
  return l;
}

inline void parse_centralized(const Json& root, ScenarioConfig& cfg) {
  check_keys(root, {"kind", "description", "robots", "controller", "sim"}, "scenario");
  auto& sc = cfg.centralized;
  const auto& robots = require(root, "robots", "scenario");
  if (!robots.is_array() || robots.empty()) throw config_error("robots: expected a non-empty array");
  for (size_t k = 0; k < robots.size(); ++k) {
    const std::string where = "robots[" + std::to_string(k) + "]";
    const auto& r = robots[k];
    check_keys(r, {"name", "A", "b", "start", "goal", "spin", "limits"}, where);
    RobotSpec spec{polytope_of(r, where)};
    if (spec.shape.dim() != 3) throw config_error(where + ": robots are 3D");
    const auto& st = require(r, "start", where);
    check_keys(st, {"r", "v", "R"}, where + ".start");
    spec.start.r = vector_of(require(st, "r", where + ".start"), where + ".start.r", 3);
    spec.start.v = st.contains("v") ? Eigen::Vector3d(vector_of(st.at("v"), where + ".start.v", 3))
                                    : Eigen::Vector3d::Zero();
    spec.start.R = Eigen::Matrix3d::Identity();
    if (st.contains("R")) {
      const MatrixXd R = matrix_of(st.at("R"), where + ".start.R");
      if (R.rows() != 3 || R.cols() != 3) throw config_error(where + ".start.R: expected 3x3");
      spec.start.R = R;
    }
    try {
      spec.start.pose().validate();
    } catch (const Error& e) {
      throw config_error(where + ".start: " + e.what());
    }
    spec.goal = vector_of(require(r, "goal", where), where + ".goal", 3);
    if (r.contains("spin")) spec.spin = vector_of(r.at("spin"), where + ".spin", 3);
    if (r.contains("limits")) spec.limits = limits_of(r.at("limits"), where + ".limits");
    cfg.bodies.push_back({r.value("name", "robot" + std::to_string(k)), "robot", spec.shape, spec.start.pose()});
    sc.robots.push_back(std::move(spec));
  }
  if (root.contains("controller")) {
    const auto& c = root.at("controller");
    check_keys(c, {"eps", "eps2", "M", "alpha2", "alpha3", "kp", "kd"}, "controller");
    auto& cc = sc.controller;
    cc.eps = number_or(c, "eps", cc.eps, "controller");
    cc.eps2 = number_or(c, "eps2", cc.eps2, "controller");
    cc.M = number_or(c, "M", cc.M, "controller");
    cc.alpha2 = number_or(c, "alpha2", cc.alpha2, "controller");
    cc.alpha3 = number_or(c, "alpha3", cc.alpha3, "controller");
    sc.kp = number_or(c, "kp", sc.kp, "controller");
    sc.kd = number_or(c, "kd", sc.kd, "controller");
    if (!(cc.eps > 0 && cc.eps2 > 0 && cc.M > 0 && cc.alpha2 > 0 && cc.alpha3 > 0))
      throw config_error("controller: values must be positive");
  }
  if (root.contains("sim"))
    parse_sim(root.at("sim"), "sim", sc.dt, sc.duration, cfg.seed, &sc.force_infeasible);
}

}  // namespace detail

inline ScenarioConfig parse_scenario(const Json& root) {
  if (!root.is_object()) throw detail::config_error("scenario: expected an object");
  const auto& kind = detail::require(root, "kind", "scenario");
  if (!kind.is_string()) throw detail::config_error("kind: expected a string");
  ScenarioConfig cfg;
  const std::string k = kind.get<std::string>();
  try {
    if (k == "sofa") {
      cfg.kind = ScenarioKind::Sofa;
      detail::parse_sofa(root, cfg);
    } else if (k == "centralized") {
      cfg.kind = ScenarioKind::Centralized;
      detail::parse_centralized(root, cfg);
    } else {
      throw detail::config_error("unknown scenario kind '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw detail::config_error(e.what());
  }
  return cfg;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Config, "cannot open scenario file '" + path + "'");
  Json root;
  try {
    root = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Config, std::string("malformed JSON: ") + e.what());
  }
  return parse_scenario(root);
}

}  // namespace dualcbf
