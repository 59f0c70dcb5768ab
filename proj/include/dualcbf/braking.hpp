#pragma once

/**
 * @file
 * @brief Centralized multi-robot certificate built on a braking maneuver.
 *
 * Every robot can stop within T_M by decelerating at -v(0)/T_M with zero
 * angular velocity. Under that flow the relative position of robot j seen
 * from robot i moves along a straight segment ending at r_ji + v_ji T_M / 2,
 * so the smallest squared distance over the whole maneuver equals the squared
 * distance between P_i and the convex hull of P_j at both segment ends. That
 * hull distance is the barrier h; its reduced dual supplies the multipliers
 * used in the centralized QP.
 *
 * All pair quantities live in a frame translated to r_i (not rotated).
 */

#include <Eigen/Dense>

#include <chrono>
#include <limits>
#include <optional>
#include <vector>

#include "dualcbf/distance.hpp"
#include "dualcbf/errors.hpp"
#include "dualcbf/geometry.hpp"
#include "dualcbf/ncbf.hpp"
#include "dualcbf/qp.hpp"

namespace dualcbf {

struct BrakingLimits {
  double a_max = 1.0;
  double w_max = 0.2 * M_PI;
  double v_max = 4.0;
};

inline double compute_tm(const std::vector<BrakingLimits>& limits) {
  if (limits.empty()) throw Error(ErrorCode::EmptyFleet, "no robots");
  double vmax = 0.0, amin = std::numeric_limits<double>::infinity();
  for (const auto& l : limits) {
    if (!(l.a_max > 0 && l.w_max > 0 && l.v_max > 0))
      throw Error(ErrorCode::Config, "braking limits must be positive");
    vmax = std::max(vmax, l.v_max);
    amin = std::min(amin, l.a_max);
  }
  return vmax / amin;
}

struct BrakingInput {
  Eigen::Vector3d a = Eigen::Vector3d::Zero();
  Eigen::Vector3d w = Eigen::Vector3d::Zero();
};

inline BrakingInput braking_input(const RigidState& s, double TM) {
  if (TM <= 0.0) throw Error(ErrorCode::Config, "T_M must be positive");
  return {-s.v / TM, Eigen::Vector3d::Zero()};
}

/// Pair data in the i-centered frame.
struct HullFrame {
  MatrixXd Ai;      // A_i R_i^T
  VectorXd bi;      // b_i
  MatrixXd Aj;      // A_j R_j^T
  VectorXd bbar0;   // b_j + Aj r_ji
  VectorXd bbarT;   // b_j + Aj (r_ji + v_ji T_M / 2)
  Eigen::Vector3d rji;
  Eigen::Vector3d vji;
  Eigen::Vector3d sweep;  // v_ji T_M / 2
  double TM = 0.0;
};

inline HullFrame hull_frame(const RigidState& si, const RigidState& sj, const Polytope& pi,
                            const Polytope& pj, double TM) {
  if (pi.dim() != 3 || pj.dim() != 3) throw Error(ErrorCode::DimensionMismatch, "hull distance is 3D");
  HullFrame f;
  f.TM = TM;
  f.rji = sj.r - si.r;
  f.vji = sj.v - si.v;
  f.sweep = f.vji * (TM / 2.0);
  f.Ai = pi.A() * si.R.transpose();
  f.bi = pi.b();
  f.Aj = pj.A() * sj.R.transpose();
  f.bbar0 = pj.b() + f.Aj * f.rji;
  f.bbarT = pj.b() + f.Aj * (f.rji + f.sweep);
  return f;
}

struct HullPrimal {
  double h = 0.0;
  Eigen::Vector3d x = Eigen::Vector3d::Zero();
  Eigen::Vector3d y = Eigen::Vector3d::Zero();
  double mu = 0.0;
};

/// Squared distance from P_i to the hull of P_j's sweep, via the lifted
/// (x, y1, y2, mu) formulation with y = y1 + y2 substituted.
inline HullPrimal hull_distance_primal(const HullFrame& f) {
  const Index ri = f.Ai.rows(), rj = f.Aj.rows();
  auto qp = QpProblem::zeros(10);
  const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
  // |x - y1 - y2|^2 = z^T K z with K = [I -I -I; -I I I; -I I I].
  Eigen::Matrix<double, 9, 9> K;
  K << I, -I, -I, -I, I, I, -I, I, I;
  qp.P.topLeftCorner(9, 9) = 2.0 * K;
  qp.Ain = MatrixXd::Zero(ri + 2 * rj, 10);
  qp.bin = VectorXd::Zero(ri + 2 * rj);
  qp.Ain.block(0, 0, ri, 3) = f.Ai;
  qp.bin.head(ri) = f.bi;
  qp.Ain.block(ri, 3, rj, 3) = f.Aj;
  qp.Ain.block(ri, 9, rj, 1) = -f.bbar0;
  qp.Ain.block(ri + rj, 6, rj, 3) = f.Aj;
  qp.Ain.block(ri + rj, 9, rj, 1) = f.bbarT;
  qp.bin.tail(rj) = f.bbarT;
  qp.lb = VectorXd::Constant(10, -std::numeric_limits<double>::infinity());
  qp.ub = VectorXd::Constant(10, std::numeric_limits<double>::infinity());
  qp.lb(9) = 0.0;
  qp.ub(9) = 1.0;
  const auto sol = solve_qp(qp);
  if (!sol.optimal()) throw Error(ErrorCode::SolverFailure, std::string("hull primal: ") + to_string(sol.status));
  HullPrimal out;
  out.x = sol.x.segment<3>(0);
  out.y = sol.x.segment<3>(3) + sol.x.segment<3>(6);
  out.mu = sol.x(9);
  out.h = (out.x - out.y).squaredNorm();
  if (out.h <= detail::kContactH) out.h = 0.0;
  return out;
}

inline HullPrimal hull_distance_primal(const RigidState& si, const RigidState& sj, const Polytope& pi,
                                       const Polytope& pj, double TM) {
  return hull_distance_primal(hull_frame(si, sj, pi, pj, TM));
}

struct HullDistanceResult {
  double h = 0.0;
  double h_primal = 0.0;
  VectorXd lam1;
  VectorXd lam2;
  double lam4 = 0.0;
  double lam5 = 0.0;
  HullFrame frame;
};

/// Reduced dual: min 1/4 |lam1 Ai|^2 + lam1 bi + lam2 bbar0 + lam5 s.t.
/// lam1 Ai + lam2 Aj = 0, lam2 Aj sweep + lam4 - lam5 = 0, lam >= 0.
/// Its optimum is -h. Cross-checked against the primal.
inline HullDistanceResult hull_distance_dual(const HullFrame& f) {
  const Index ri = f.Ai.rows(), rj = f.Aj.rows();
  const Index n = ri + rj + 2;
  auto qp = QpProblem::zeros(n);
  qp.P.topLeftCorner(ri, ri) = 0.5 * f.Ai * f.Ai.transpose();
  qp.q << f.bi, f.bbar0, 0.0, 1.0;
  qp.Aeq = MatrixXd::Zero(4, n);
  qp.Aeq.block(0, 0, 3, ri) = f.Ai.transpose();
  qp.Aeq.block(0, ri, 3, rj) = f.Aj.transpose();
  qp.Aeq.block(3, ri, 1, rj) = (f.Aj * f.sweep).transpose();
  qp.Aeq(3, ri + rj) = 1.0;
  qp.Aeq(3, ri + rj + 1) = -1.0;
  qp.beq = VectorXd::Zero(4);
  qp.lb = VectorXd::Zero(n);
  const auto sol = solve_qp(qp);
  if (!sol.optimal()) throw Error(ErrorCode::SolverFailure, std::string("hull dual: ") + to_string(sol.status));

  HullDistanceResult out;
  out.frame = f;
  out.lam1 = sol.x.head(ri);
  out.lam2 = sol.x.segment(ri, rj);
  out.lam4 = sol.x(ri + rj);
  out.lam5 = sol.x(ri + rj + 1);
  out.h = std::max(0.0, -sol.objective);
  out.h_primal = hull_distance_primal(f).h;
  if (std::abs(out.h - out.h_primal) > 1e-5)
    throw Error(ErrorCode::DualMismatch, "reduced dual " + std::to_string(out.h) + " vs primal " +
                                             std::to_string(out.h_primal));
  if (out.h <= detail::kContactH) {
    out.h = 0.0;
    out.lam1.setZero();
    out.lam2.setZero();
    out.lam4 = out.lam5 = 0.0;
  }
  return out;
}

inline HullDistanceResult hull_distance_dual(const RigidState& si, const RigidState& sj, const Polytope& pi,
                                             const Polytope& pj, double TM) {
  return hull_distance_dual(hull_frame(si, sj, pi, pj, TM));
}

/// Unreduced dual with lam3 and the free lam6, for cross-checking only.
struct HullFullDual {
  double h = 0.0;
  VectorXd lam1, lam2, lam3;
  double lam4 = 0.0, lam5 = 0.0;
  Eigen::Vector3d lam6 = Eigen::Vector3d::Zero();
};

inline HullFullDual hull_full_dual(const HullFrame& f) {
  const Index ri = f.Ai.rows(), rj = f.Aj.rows();
  const Index o2 = ri, o3 = ri + rj, o4 = ri + 2 * rj, o5 = o4 + 1, o6 = o4 + 2;
  const Index n = o6 + 3;
  auto qp = QpProblem::zeros(n);
  qp.P.block(o6, o6, 3, 3) = 0.5 * Eigen::Matrix3d::Identity();
  qp.q.segment(0, ri) = f.bi;
  qp.q.segment(o3, rj) = f.bbarT;
  qp.q(o4) = 1.0;
  qp.Aeq = MatrixXd::Zero(10, n);
  qp.Aeq.block(0, 0, 3, ri) = f.Ai.transpose();
  qp.Aeq.block(0, o6, 3, 3) = Eigen::Matrix3d::Identity();
  qp.Aeq.block(3, o2, 3, rj) = f.Aj.transpose();
  qp.Aeq.block(3, o6, 3, 3) = -Eigen::Matrix3d::Identity();
  qp.Aeq.block(6, o3, 3, rj) = f.Aj.transpose();
  qp.Aeq.block(6, o6, 3, 3) = -Eigen::Matrix3d::Identity();
  qp.Aeq.block(9, o2, 1, rj) = -f.bbar0.transpose();
  qp.Aeq.block(9, o3, 1, rj) = f.bbarT.transpose();
  qp.Aeq(9, o4) = 1.0;
  qp.Aeq(9, o5) = -1.0;
  qp.beq = VectorXd::Zero(10);
  qp.lb = VectorXd::Constant(n, -std::numeric_limits<double>::infinity());
  qp.lb.head(o6).setZero();
  const auto sol = solve_qp(qp);
  if (!sol.optimal()) throw Error(ErrorCode::SolverFailure, std::string("hull full dual: ") + to_string(sol.status));
  HullFullDual out;
  out.lam1 = sol.x.head(ri);
  out.lam2 = sol.x.segment(o2, rj);
  out.lam3 = sol.x.segment(o3, rj);
  out.lam4 = sol.x(o4);
  out.lam5 = sol.x(o5);
  out.lam6 = sol.x.segment<3>(o6);
  out.h = std::max(0.0, -sol.objective);
  return out;
}

struct CentralizedConfig {
  double eps = 0.05;
  double eps2 = kDefaultEps2;
  double M = kDefaultLamdotBound;
  double alpha2 = 1.0;
  double alpha3 = 1.0;
};

struct CentralizedPair {
  Index i = 0;
  Index j = 0;
  HullDistanceResult hull;
};

/// Structural size of the centralized QP. Constraint count: equality rows +
/// barrier rows + velocity rows + sign rows on every multiplier rate + one per
/// input channel (the box |a|, |w|). `max_constraints` assumes every
/// multiplier is almost inactive, matching the closed-form upper bound.
struct CentralizedSize {
  Index variables = 0;
  Index constraints = 0;
  Index max_constraints = 0;
};

struct CentralizedDecision {
  ControlDecision decision;
  std::vector<CentralizedPair> pairs;
  CentralizedSize size;
};

namespace detail {

struct CentralizedAssembly {
  QpProblem qp;
  std::vector<Index> offset;
  CentralizedSize size;
  /// Ldot = coef . x + const, per pair.
  std::vector<VectorXd> ldot_coef;
  std::vector<double> ldot_const;
};

inline CentralizedAssembly assemble_centralized(const std::vector<RigidState>& states,
                                                const std::vector<CentralizedPair>& pairs,
                                                const VectorXd& u_nom, const std::vector<BrakingLimits>& limits,
                                                const CentralizedConfig& cfg) {
  const Index N = static_cast<Index>(states.size());
  const Index nu = 6 * N;
  CentralizedAssembly ca;
  Index n = nu;
  for (const auto& p : pairs) {
    ca.offset.push_back(n);
    n += p.hull.lam1.size() + p.hull.lam2.size() + 2;
  }
  const Index P = static_cast<Index>(pairs.size());
  auto& qp = ca.qp;
  qp = QpProblem::zeros(n);
  qp.P.topLeftCorner(nu, nu) = 2.0 * MatrixXd::Identity(nu, nu);
  qp.q.head(nu) = -2.0 * u_nom;
  qp.lb = VectorXd::Constant(n, -cfg.M);
  qp.ub = VectorXd::Constant(n, cfg.M);
  for (Index r = 0; r < N; ++r) {
    const auto& L = limits[static_cast<size_t>(r)];
    qp.lb.segment(6 * r, 3).setConstant(-L.a_max);
    qp.ub.segment(6 * r, 3).setConstant(L.a_max);
    qp.lb.segment(6 * r + 3, 3).setConstant(-L.w_max);
    qp.ub.segment(6 * r + 3, 3).setConstant(L.w_max);
  }
  qp.Aeq = MatrixXd::Zero(4 * P, n);
  qp.beq = VectorXd::Zero(4 * P);
  qp.Ain = MatrixXd::Zero(P + N, n);
  qp.bin = VectorXd::Zero(P + N);

  Index sign_rows = 0, all_multipliers = 0;
  for (Index k = 0; k < P; ++k) {
    const auto& pr = pairs[static_cast<size_t>(k)];
    const auto& hd = pr.hull;
    const auto& f = hd.frame;
    const Index ri = hd.lam1.size(), rj = hd.lam2.size();
    const Index o1 = ca.offset[static_cast<size_t>(k)], o2 = o1 + ri, o4 = o2 + rj, o5 = o4 + 1;
    const Index ai = 6 * pr.i, wi = ai + 3, aj = 6 * pr.j, wj = aj + 3;
    const Eigen::Matrix3d& Ri = states[static_cast<size_t>(pr.i)].R;
    const Eigen::Matrix3d& Rj = states[static_cast<size_t>(pr.j)].R;
    // Body-frame A^T lambda for the rotation terms.
    const Eigen::Vector3d gi = Ri.transpose() * (f.Ai.transpose() * hd.lam1);
    const Eigen::Vector3d gj = Rj.transpose() * (f.Aj.transpose() * hd.lam2);
    const Eigen::Matrix3d Ci = -Ri * hat(gi);  // (lam1 Adot_i)^T = Ci w_i
    const Eigen::Matrix3d Cj = -Rj * hat(gj);
    const Eigen::Vector3d ajl = f.Aj.transpose() * hd.lam2;  // (lam2 Aj)^T

    // lamdot1 Ai + lam1 Adot_i + lamdot2 Aj + lam2 Adot_j = 0
    const Index e = 4 * k;
    qp.Aeq.block(e, o1, 3, ri) = f.Ai.transpose();
    qp.Aeq.block(e, o2, 3, rj) = f.Aj.transpose();
    qp.Aeq.block(e, wi, 3, 3) += Ci;
    qp.Aeq.block(e, wj, 3, 3) += Cj;
    // (lamdot2 Aj + lam2 Adot_j) sweep + lam2 Aj a_ji T/2 + lamdot4 - lamdot5 = 0
    qp.Aeq.block(e + 3, o2, 1, rj) = (f.Aj * f.sweep).transpose();
    qp.Aeq.block(e + 3, wj, 1, 3) += f.sweep.transpose() * Cj;
    qp.Aeq.block(e + 3, aj, 1, 3) += (f.TM / 2.0) * ajl.transpose();
    qp.Aeq.block(e + 3, ai, 1, 3) -= (f.TM / 2.0) * ajl.transpose();
    qp.Aeq(e + 3, o4) = 1.0;
    qp.Aeq(e + 3, o5) = -1.0;

    // Ldot = -1/2 lam1 Ai Ai^T lamdot1 - lamdot1 bi - lamdot2 bbar0
    //        - lam2 bbar0dot - lamdot5,
    // lam2 bbar0dot = (lam2 Adot_j) r_ji + lam2 Aj v_ji.
    VectorXd coef = VectorXd::Zero(n);
    coef.segment(o1, ri) = -0.5 * f.Ai * (f.Ai.transpose() * hd.lam1) - f.bi;
    coef.segment(o2, rj) = -f.bbar0;
    coef(o5) = -1.0;
    coef.segment(wj, 3) += -(f.rji.transpose() * Cj).transpose();
    const double c0 = -ajl.dot(f.vji);
    ca.ldot_coef.push_back(coef);
    ca.ldot_const.push_back(c0);
    qp.Ain.row(k) = -coef.transpose();
    qp.bin(k) = c0 + cfg.alpha2 * (hd.h - cfg.eps * cfg.eps);

    for (Index s = 0; s < ri; ++s)
      if (hd.lam1(s) < cfg.eps2) qp.lb(o1 + s) = 0.0, ++sign_rows;
    for (Index s = 0; s < rj; ++s)
      if (hd.lam2(s) < cfg.eps2) qp.lb(o2 + s) = 0.0, ++sign_rows;
    if (hd.lam4 < cfg.eps2) qp.lb(o4) = 0.0, ++sign_rows;
    if (hd.lam5 < cfg.eps2) qp.lb(o5) = 0.0, ++sign_rows;
    all_multipliers += ri + rj + 2;
  }
  for (Index r = 0; r < N; ++r) {
    const auto& s = states[static_cast<size_t>(r)];
    const auto& L = limits[static_cast<size_t>(r)];
    qp.Ain.block(P + r, 6 * r, 1, 3) = s.v.transpose();
    qp.bin(P + r) = cfg.alpha3 * (L.v_max * L.v_max - s.v.squaredNorm());
  }
  ca.size.variables = n;
  const Index base = 4 * P + P + N + nu;
  ca.size.constraints = base + sign_rows;
  ca.size.max_constraints = base + all_multipliers;
  return ca;
}

}  // namespace detail

/// Hull distances and multipliers for every pair i < j.
inline std::vector<CentralizedPair> centralized_pairs(const std::vector<RigidState>& states,
                                                      const std::vector<Polytope>& polys, double TM) {
  if (states.size() != polys.size()) throw Error(ErrorCode::DimensionMismatch, "one polytope per robot");
  std::vector<CentralizedPair> out;
  for (size_t i = 0; i < states.size(); ++i)
    for (size_t j = i + 1; j < states.size(); ++j)
      out.push_back({static_cast<Index>(i), static_cast<Index>(j),
                     hull_distance_dual(states[i], states[j], polys[i], polys[j], TM)});
  return out;
}

inline CentralizedSize centralized_size(const std::vector<RigidState>& states,
                                        const std::vector<CentralizedPair>& pairs,
                                        const std::vector<BrakingLimits>& limits, const CentralizedConfig& cfg) {
  const VectorXd u_nom = VectorXd::Zero(6 * static_cast<Index>(states.size()));
  return detail::assemble_centralized(states, pairs, u_nom, limits, cfg).size;
}

/// One centralized QP solve. `u_nom` stacks (a_i, w_i) per robot.
inline CentralizedDecision solve_centralized(const std::vector<RigidState>& states,
                                             const std::vector<Polytope>& polys, const VectorXd& u_nom,
                                             const std::vector<BrakingLimits>& limits,
                                             const CentralizedConfig& cfg,
                                             std::optional<std::vector<CentralizedPair>> precomputed = std::nullopt) {
  const Index N = static_cast<Index>(states.size());
  if (N == 0) throw Error(ErrorCode::EmptyFleet, "no robots");
  if (static_cast<Index>(limits.size()) != N || u_nom.size() != 6 * N)
    throw Error(ErrorCode::DimensionMismatch, "fleet sizes disagree");
  const double TM = compute_tm(limits);
  CentralizedDecision out;
  out.pairs = precomputed ? std::move(*precomputed) : centralized_pairs(states, polys, TM);
  auto& dec = out.decision;
  dec.u = VectorXd::Zero(6 * N);
  for (const auto& p : out.pairs) dec.pairs.push_back({p.hull.h, 0.0, 0.0});
  for (const auto& p : out.pairs)
    if (p.hull.h < cfg.eps * cfg.eps) {
      dec.status = FilterStatus::SafetyViolated;
      return out;
    }

  auto ca = detail::assemble_centralized(states, out.pairs, u_nom, limits, cfg);
  out.size = ca.size;
  dec.num_variables = ca.size.variables;
  dec.num_constraints = ca.size.constraints;
  ca.qp.start = VectorXd::Zero(ca.size.variables);

  const auto t0 = std::chrono::steady_clock::now();
  const auto sol = solve_qp(ca.qp);
  dec.solve_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (sol.status == QpStatus::Infeasible) {
    dec.status = FilterStatus::Infeasible;
    return out;
  }
  if (!sol.optimal())
    throw Error(ErrorCode::SolverFailure, std::string("centralized QP: ") + to_string(sol.status));
  dec.status = FilterStatus::Optimal;
  dec.u = sol.x.head(6 * N);
  for (Index r = 0; r < N; ++r) {
    const auto& L = limits[static_cast<size_t>(r)];
    dec.u.segment(6 * r, 3) = dec.u.segment(6 * r, 3).cwiseMax(-L.a_max).cwiseMin(L.a_max);
    dec.u.segment(6 * r + 3, 3) = dec.u.segment(6 * r + 3, 3).cwiseMax(-L.w_max).cwiseMin(L.w_max);
  }
  for (size_t k = 0; k < out.pairs.size(); ++k) {
    auto& d = dec.pairs[k];
    d.ldot = ca.ldot_coef[k].dot(sol.x) + ca.ldot_const[k];
    d.margin = d.ldot + cfg.alpha2 * (d.h - cfg.eps * cfg.eps);
  }
  return out;
}

enum class SupervisorMode { Controller, Braking };

inline const char* to_string(SupervisorMode m) { return m == SupervisorMode::Controller ? "qp" : "braking"; }

/// Falls back to the braking maneuver for exactly T_M whenever the
/// centralized QP is not usable, then hands control back.
class Supervisor {
 public:
  Supervisor(double TM, double dt) : TM_(TM), latch_steps_(static_cast<long>(std::llround(TM / dt))) {}

  SupervisorMode mode() const { return braking_left_ > 0 ? SupervisorMode::Braking : SupervisorMode::Controller; }
  long braking_events() const { return events_; }

  /// Inputs for this step. `qp_usable` is false when the QP was infeasible
  /// (or deliberately disabled); `qp_u` is used otherwise.
  VectorXd step(const std::vector<RigidState>& states, bool qp_usable, const VectorXd& qp_u) {
    if (braking_left_ == 0 && !qp_usable) {
      latched_v_.clear();
      for (const auto& s : states) latched_v_.push_back(s.v);
      braking_left_ = latch_steps_;
      ++events_;
    }
    if (braking_left_ > 0) {
      --braking_left_;
      VectorXd u = VectorXd::Zero(6 * static_cast<Index>(states.size()));
      for (size_t r = 0; r < states.size(); ++r) u.segment<3>(6 * static_cast<Index>(r)) = -latched_v_[r] / TM_;
      return u;
    }
    return qp_u;
  }

  /// Whether the previous call latched or continued braking.
  bool braking_active_for_next() const { return braking_left_ > 0; }

 private:
  double TM_;
  long latch_steps_;
  long braking_left_ = 0;
  long events_ = 0;
  std::vector<Eigen::Vector3d> latched_v_;
};

}  // namespace dualcbf
