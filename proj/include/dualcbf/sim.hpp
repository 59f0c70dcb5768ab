#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dualcbf/braking.hpp"
#include "dualcbf/distance.hpp"
#include "dualcbf/errors.hpp"
#include "dualcbf/geometry.hpp"
#include "dualcbf/ncbf.hpp"
#include "dualcbf/trace.hpp"

namespace dualcbf {

struct SofaState {
  double z1 = 0.0;
  double z2 = 0.0;
  double theta = 0.0;
};

/// Direction of travel for heading theta.
inline Eigen::Vector2d sofa_heading(double theta) {
  return {std::cos(theta + M_PI / 4), std::sin(theta + M_PI / 4)};
}

/// (z1', z2', theta') for input u = (v, w).
inline Eigen::Vector3d sofa_dynamics(const SofaState& s, const VectorXd& u) {
  if (u.size() != 2) throw Error(ErrorCode::DimensionMismatch, "sofa input is (v, w)");
  const Eigen::Vector2d d = sofa_heading(s.theta);
  return {u(0) * d.x(), u(0) * d.y(), u(1)};
}

inline SofaState sofa_step(const SofaState& s, const VectorXd& u, double dt) {
  const Eigen::Vector3d r = sofa_dynamics(s, u);
  return {s.z1 + dt * r.x(), s.z2 + dt * r.y(), s.theta + dt * r.z()};
}

struct ClfSpec {
  Eigen::Vector2d zd = Eigen::Vector2d::Zero();
  double theta_d = 0.0;
  double k = 1.0;
  double alpha1 = 1.0;
  double slack_weight = 100.0;
};

struct ClfValue {
  double V = 0.0;
  Eigen::Vector3d grad = Eigen::Vector3d::Zero();
};

/// V = |z - zd|^2 + k (theta - theta_d)^2 and its gradient in (z1, z2, theta).
inline ClfValue clf_nominal(const SofaState& s, const ClfSpec& spec) {
  const double e1 = s.z1 - spec.zd.x(), e2 = s.z2 - spec.zd.y(), e3 = s.theta - spec.theta_d;
  return {e1 * e1 + e2 * e2 + spec.k * e3 * e3, {2 * e1, 2 * e2, 2 * spec.k * e3}};
}

/// CLF row for the filter. The sofa is drift-free, so LfV = 0.
inline ClfRow sofa_clf_row(const SofaState& s, const ClfSpec& spec) {
  const auto c = clf_nominal(s, spec);
  ClfRow row;
  row.V = c.V;
  row.LfV = 0.0;
  row.LgV = VectorXd(2);
  row.LgV << c.grad.head<2>().dot(sofa_heading(s.theta)), c.grad.z();
  row.alpha1 = spec.alpha1;
  row.slack_weight = spec.slack_weight;
  return row;
}

/// (r, v, R) rate under body-frame angular velocity; returns R after dt on
/// the group, re-orthonormalized.
inline Eigen::Matrix3d integrate_rotation(const Eigen::Matrix3d& R, const Eigen::Vector3d& w, double dt) {
  const Eigen::Vector3d phi = dt * w;
  const double angle = phi.norm();
  Eigen::Matrix3d E = Eigen::Matrix3d::Identity();
  if (angle > 0.0) E = Eigen::AngleAxisd(angle, phi / angle).toRotationMatrix();
  Eigen::Matrix3d Rn = R * E;
  // Gram-Schmidt on the columns.
  Eigen::Vector3d c0 = Rn.col(0).normalized();
  Eigen::Vector3d c1 = (Rn.col(1) - c0.dot(Rn.col(1)) * c0).normalized();
  Rn.col(0) = c0;
  Rn.col(1) = c1;
  Rn.col(2) = c0.cross(c1);
  return Rn;
}

/// Rate of a fully actuated rigid body: (r', v') = (v, a); R' = R hat(w).
struct RigidRate {
  Eigen::Vector3d rdot;
  Eigen::Vector3d vdot;
  Eigen::Matrix3d Rdot;
};

inline RigidRate rigid6_dynamics(const RigidState& s, const Eigen::Vector3d& a, const Eigen::Vector3d& w) {
  return {s.v, a, s.R * hat(w)};
}

/// Exact for the double integrator under a held input, so the braking
/// maneuver ends exactly on its hull endpoint.
inline RigidState rigid6_step(const RigidState& s, const Eigen::Vector3d& a, const Eigen::Vector3d& w,
                              double dt) {
  RigidState n;
  n.r = s.r + dt * s.v + 0.5 * dt * dt * a;
  n.v = s.v + dt * a;
  n.R = integrate_rotation(s.R, w, dt);
  return n;
}

struct SofaScenario {
  /// Arm shapes in the sofa body frame.
  std::vector<Polytope> arms;
  /// Static obstacles in world coordinates.
  std::vector<Polytope> walls;
  SofaState start;
  ClfSpec clf;
  bool use_clf = true;
  ControllerConfig controller;
  double dt = 0.02;
  double duration = 60.0;
};

struct SofaRunResult {
  Trace trace;
  bool deadlock = false;
  double V0 = 0.0;
  double V_final = 0.0;
  double min_h = std::numeric_limits<double>::infinity();
  double mean_step_ms = 0.0;
  SofaState final_state;
  Index filter_variables = 0;
  Index max_filter_constraints = 0;
};

/// Distances and contexts for all arm/wall pairs at one state.
struct SofaStepInputs {
  std::vector<PairContext> pairs;
};

inline SofaStepInputs sofa_contexts(const SofaScenario& sc, const SofaState& s) {
  SofaStepInputs out;
  const Pose pose = Pose::planar(s.z1, s.z2, s.theta);
  const VectorXd dir = sofa_heading(s.theta);
  const VectorXd zero2 = VectorXd::Zero(2), zero1 = VectorXd::Zero(1), one = VectorXd::Ones(1);
  std::vector<PlacedHRep> walls;
  for (const auto& w : sc.walls) walls.push_back(place(w, Pose::identity(2)));
  for (const auto& arm : sc.arms) {
    const PlacedHRep placed = place(arm, pose);
    AffineRates rates = AffineRates::zero(arm.rows(), 2, 2);
    rates.channels[0] = hrep_rates(arm, pose, dir, zero1);
    rates.channels[1] = hrep_rates(arm, pose, zero2, one);
    for (size_t w = 0; w < walls.size(); ++w) {
      auto res = min_distance_dual(placed, walls[w], sc.controller.eps2);
      out.pairs.push_back(make_pair_context(std::move(res), placed, walls[w], rates,
                                            AffineRates::zero(sc.walls[w].rows(), 2, 2), sc.controller.eps2));
    }
  }
  return out;
}

inline SofaRunResult run_sofa(const SofaScenario& sc) {
  if (sc.arms.empty()) throw Error(ErrorCode::Config, "sofa scenario has no arms");
  if (sc.dt <= 0.0 || sc.duration < 0.0) throw Error(ErrorCode::Config, "dt and duration must be positive");
  SofaRunResult out;
  auto& tr = out.trace;
  tr.value_columns = {"z1", "z2", "theta", "v", "w"};
  // Body indices: arms first, then walls.
  std::vector<std::string> pair_names;
  for (size_t a = 0; a < sc.arms.size(); ++a)
    for (size_t w = 0; w < sc.walls.size(); ++w)
      pair_names.push_back(std::to_string(a) + "_" + std::to_string(sc.arms.size() + w));
  for (const auto& p : pair_names) tr.value_columns.push_back("h_" + p);
  for (const auto& p : pair_names) tr.value_columns.push_back("Ldot_" + p);
  tr.value_columns.push_back("V");
  tr.value_columns.push_back("slack");
  tr.tag_columns = {"status"};

  const long steps = static_cast<long>(std::floor(sc.duration / sc.dt + 1e-9));
  SofaState s = sc.start;
  double still_time = 0.0;
  double prev_V = std::numeric_limits<double>::quiet_NaN();
  double total_ms = 0.0;

  for (long k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * sc.dt;
    const auto t0 = std::chrono::steady_clock::now();
    auto in = sofa_contexts(sc, s);
    for (const auto& p : in.pairs) {
      out.min_h = std::min(out.min_h, p.result.h);
      if (p.result.h < sc.controller.eps1 * sc.controller.eps1)
        throw Error(ErrorCode::SafetyViolated, "pair distance below margin at t=" + format_number(t));
    }
    std::optional<ClfRow> clf;
    if (sc.use_clf) clf = sofa_clf_row(s, sc.clf);
    const double V = clf_nominal(s, sc.clf).V;
    if (k == 0) out.V0 = V;
    auto dec = solve_safety_filter(in.pairs, VectorXd::Zero(2), sc.controller, clf);
    const double step_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    total_ms += step_ms;
    if (dec.status == FilterStatus::Infeasible)
      throw Error(ErrorCode::SolverFailure, "safety filter infeasible at t=" + format_number(t));
    if (dec.status == FilterStatus::SafetyViolated)
      throw Error(ErrorCode::SafetyViolated, "safety filter rejected state at t=" + format_number(t));
    out.filter_variables = dec.num_variables;
    out.max_filter_constraints = std::max(out.max_filter_constraints, dec.num_constraints);

    TraceRow row;
    row.t = t;
    row.values = {s.z1, s.z2, s.theta, dec.u(0), dec.u(1)};
    for (const auto& d : dec.pairs) row.values.push_back(d.h);
    for (const auto& d : dec.pairs) row.values.push_back(d.ldot);
    row.values.push_back(V);
    row.values.push_back(dec.slack);
    row.tags = {to_string(dec.status)};
    row.solve_ms = step_ms;
    tr.rows.push_back(std::move(row));

    if (!std::isnan(prev_V) && dec.u.norm() <= 1e-4 && std::abs(V - prev_V) <= 1e-8) {
      still_time += sc.dt;
      if (still_time >= 2.0 - 1e-9) out.deadlock = true;
    } else {
      still_time = 0.0;
    }
    prev_V = V;
    out.V_final = V;
    out.final_state = s;
    if (k < steps) s = sofa_step(s, dec.u, sc.dt);
  }
  out.mean_step_ms = total_ms / static_cast<double>(steps + 1);
  return out;
}

struct RobotSpec {
  Polytope shape;
  RigidState start;
  Eigen::Vector3d goal = Eigen::Vector3d::Zero();
  BrakingLimits limits;
  /// Constant nominal body angular velocity.
  Eigen::Vector3d spin = Eigen::Vector3d::Zero();
};

struct CentralizedScenario {
  std::vector<RobotSpec> robots;
  CentralizedConfig controller;
  double kp = 1.0;
  double kd = 2.0;
  double dt = 0.02;
  double duration = 20.0;
  /// Steps whose QP result is discarded and reported as infeasible.
  std::vector<double> force_infeasible;
};

struct CentralizedRunResult {
  Trace trace;
  double min_rho = std::numeric_limits<double>::infinity();
  double min_h = std::numeric_limits<double>::infinity();
  double max_speed = 0.0;
  long braking_events = 0;
  long braking_steps = 0;
  std::vector<RigidState> final_states;
  Index max_variables = 0;
  Index max_constraints = 0;
};

/// PD toward the goal, clipped to the box limits.
inline VectorXd centralized_nominal(const CentralizedScenario& sc, const std::vector<RigidState>& states) {
  const Index N = static_cast<Index>(states.size());
  VectorXd u(6 * N);
  for (Index r = 0; r < N; ++r) {
    const auto& spec = sc.robots[static_cast<size_t>(r)];
    const auto& s = states[static_cast<size_t>(r)];
    const double am = spec.limits.a_max, wm = spec.limits.w_max;
    const Eigen::Vector3d a = sc.kp * (spec.goal - s.r) - sc.kd * s.v;
    u.segment<3>(6 * r) = a.cwiseMax(-am).cwiseMin(am);
    u.segment<3>(6 * r + 3) = spec.spin.cwiseMax(-wm).cwiseMin(wm);
  }
  return u;
}

inline double instantaneous_rho(const RigidState& si, const RigidState& sj, const Polytope& pi,
                                const Polytope& pj) {
  return min_distance_primal(place(pi, si.pose()), place(pj, sj.pose())).h;
}

inline CentralizedRunResult run_centralized(const CentralizedScenario& sc) {
  const size_t N = sc.robots.size();
  if (N == 0) throw Error(ErrorCode::EmptyFleet, "no robots");
  if (sc.dt <= 0.0 || sc.duration < 0.0) throw Error(ErrorCode::Config, "dt and duration must be positive");
  std::vector<Polytope> polys;
  std::vector<BrakingLimits> limits;
  std::vector<RigidState> states;
  for (const auto& r : sc.robots) {
    if (r.shape.dim() != 3) throw Error(ErrorCode::DimensionMismatch, "centralized robots are 3D");
    polys.push_back(r.shape);
    limits.push_back(r.limits);
    states.push_back(r.start);
  }
  const double TM = compute_tm(limits);
  const double eps2m = sc.controller.eps * sc.controller.eps;
  const double rho_floor = std::pow(sc.controller.eps - 1e-4, 2);

  CentralizedRunResult out;
  auto& tr = out.trace;
  const char* axes[] = {"x", "y", "z"};
  for (size_t r = 0; r < N; ++r)
    for (const char* a : axes) tr.value_columns.push_back(std::string("r") + a + "_" + std::to_string(r));
  for (size_t r = 0; r < N; ++r)
    for (const char* a : axes) tr.value_columns.push_back(std::string("v") + a + "_" + std::to_string(r));
  for (size_t r = 0; r < N; ++r)
    for (const char* a : axes) tr.value_columns.push_back(std::string("a") + a + "_" + std::to_string(r));
  for (size_t r = 0; r < N; ++r)
    for (const char* a : axes) tr.value_columns.push_back(std::string("w") + a + "_" + std::to_string(r));
  std::vector<std::string> pair_names;
  for (size_t i = 0; i < N; ++i)
    for (size_t j = i + 1; j < N; ++j) pair_names.push_back(std::to_string(i) + "_" + std::to_string(j));
  for (const auto& p : pair_names) tr.value_columns.push_back("sqrt_h_" + p);
  for (const auto& p : pair_names) tr.value_columns.push_back("sqrt_rho_" + p);
  for (const auto& p : pair_names) tr.value_columns.push_back("Ldot_" + p);
  tr.tag_columns = {"mode", "status"};

  Supervisor sup(TM, sc.dt);
  std::optional<std::vector<CentralizedPair>> predicted;
  const long steps = static_cast<long>(std::floor(sc.duration / sc.dt + 1e-9));
  for (long k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * sc.dt;
    const auto t0 = std::chrono::steady_clock::now();
    auto pairs = predicted ? std::move(*predicted) : centralized_pairs(states, polys, TM);
    predicted.reset();
    std::vector<double> rho;
    for (const auto& p : pairs) {
      out.min_h = std::min(out.min_h, p.hull.h);
      const double r = instantaneous_rho(states[static_cast<size_t>(p.i)], states[static_cast<size_t>(p.j)],
                                         polys[static_cast<size_t>(p.i)], polys[static_cast<size_t>(p.j)]);
      rho.push_back(r);
      out.min_rho = std::min(out.min_rho, r);
      if (k == 0 && p.hull.h < eps2m)
        throw Error(ErrorCode::SafetyViolated, "initial braking distance below margin");
      if (r < rho_floor) throw Error(ErrorCode::SafetyViolated, "pair distance below margin at t=" + format_number(t));
    }
    for (const auto& s : states) out.max_speed = std::max(out.max_speed, s.v.norm());

    const bool braking_now = sup.braking_active_for_next();
    CentralizedDecision cd;
    bool usable = false;
    std::string status;
    if (!braking_now) {
      cd = solve_centralized(states, polys, centralized_nominal(sc, states), limits, sc.controller, pairs);
      usable = cd.decision.status == FilterStatus::Optimal;
      status = to_string(cd.decision.status);
      for (double ft : sc.force_infeasible)
        if (std::abs(ft - t) < 0.5 * sc.dt) usable = false, status = "Forced";
      if (usable && k < steps) {
        // Held inputs can cross a kink of h between samples; brake now rather
        // than arrive below the margin.
        std::vector<RigidState> next = states;
        for (size_t r = 0; r < N; ++r)
          next[r] = rigid6_step(states[r], cd.decision.u.segment<3>(6 * static_cast<Index>(r)),
                                cd.decision.u.segment<3>(6 * static_cast<Index>(r) + 3), sc.dt);
        auto next_pairs = centralized_pairs(next, polys, TM);
        for (const auto& p : next_pairs)
          if (p.hull.h < eps2m) usable = false, status = "Lookahead";
        if (usable) predicted = std::move(next_pairs);
      }
      out.max_variables = std::max(out.max_variables, cd.size.variables);
      out.max_constraints = std::max(out.max_constraints, cd.size.constraints);
    } else {
      status = "latched";
      cd.pairs = std::move(pairs);
      cd.decision.u = VectorXd::Zero(6 * static_cast<Index>(N));
      for (const auto& p : cd.pairs) cd.decision.pairs.push_back({p.hull.h, 0.0, 0.0});
    }
    const VectorXd u = sup.step(states, usable, cd.decision.u);
    const SupervisorMode mode = sup.braking_active_for_next() || (!usable) ? SupervisorMode::Braking
                                                                            : SupervisorMode::Controller;
    if (mode == SupervisorMode::Braking) ++out.braking_steps;
    const double step_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    TraceRow row;
    row.t = t;
    for (const auto& s : states)
      for (int a = 0; a < 3; ++a) row.values.push_back(s.r(a));
    for (const auto& s : states)
      for (int a = 0; a < 3; ++a) row.values.push_back(s.v(a));
    for (size_t r = 0; r < N; ++r)
      for (int a = 0; a < 3; ++a) row.values.push_back(u(6 * static_cast<Index>(r) + a));
    for (size_t r = 0; r < N; ++r)
      for (int a = 0; a < 3; ++a) row.values.push_back(u(6 * static_cast<Index>(r) + 3 + a));
    for (const auto& p : cd.pairs) row.values.push_back(std::sqrt(p.hull.h));
    for (double r : rho) row.values.push_back(std::sqrt(r));
    for (size_t q = 0; q < cd.pairs.size(); ++q)
      row.values.push_back(braking_now || !usable ? std::numeric_limits<double>::quiet_NaN()
                                                  : cd.decision.pairs[q].ldot);
    row.tags = {to_string(mode), status};
    row.solve_ms = step_ms;
    tr.rows.push_back(std::move(row));

    if (k < steps)
      for (size_t r = 0; r < N; ++r)
        states[r] = rigid6_step(states[r], u.segment<3>(6 * static_cast<Index>(r)),
                                u.segment<3>(6 * static_cast<Index>(r) + 3), sc.dt);
  }
  out.braking_events = sup.braking_events();
  out.final_states = states;
  return out;
}

}  // namespace dualcbf
