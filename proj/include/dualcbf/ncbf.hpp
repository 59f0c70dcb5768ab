#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <optional>
#include <vector>

#include "dualcbf/distance.hpp"
#include "dualcbf/errors.hpp"
#include "dualcbf/geometry.hpp"
#include "dualcbf/qp.hpp"

namespace dualcbf {

/// H-rep rates that are affine in the input: drift + sum_c u_c * channels[c].
struct AffineRates {
  HRepRates drift;
  std::vector<HRepRates> channels;

  static AffineRates zero(Index rows, Index dim, Index inputs) {
    AffineRates r;
    r.drift = HRepRates::zero(rows, dim);
    r.channels.assign(static_cast<size_t>(inputs), HRepRates::zero(rows, dim));
    return r;
  }

  Index inputs() const { return static_cast<Index>(channels.size()); }

  HRepRates at(const VectorXd& u) const {
    if (u.size() != inputs()) throw Error(ErrorCode::DimensionMismatch, "input size");
    HRepRates out = drift;
    for (Index c = 0; c < inputs(); ++c) {
      out.Adot += u(c) * channels[c].Adot;
      out.bdot += u(c) * channels[c].bdot;
    }
    return out;
  }
};

struct PairContext {
  DistanceResult result;
  PlacedHRep placed_i;
  PlacedHRep placed_j;
  AffineRates rates_i;
  AffineRates rates_j;
  /// Faces whose multiplier rate is sign-constrained (lambda_k < eps2).
  std::vector<Index> sign_i;
  std::vector<Index> sign_j;
};

inline PairContext make_pair_context(DistanceResult result, PlacedHRep placed_i, PlacedHRep placed_j,
                                     AffineRates rates_i, AffineRates rates_j,
                                     double eps2 = kDefaultEps2) {
  if (rates_i.inputs() != rates_j.inputs())
    throw Error(ErrorCode::DimensionMismatch, "rate maps disagree on input count");
  PairContext ctx{std::move(result), std::move(placed_i), std::move(placed_j), std::move(rates_i),
                  std::move(rates_j), {}, {}};
  for (Index k = 0; k < ctx.result.lam_i.size(); ++k)
    if (ctx.result.lam_i(k) < eps2) ctx.sign_i.push_back(k);
  for (Index k = 0; k < ctx.result.lam_j.size(); ++k)
    if (ctx.result.lam_j(k) < eps2) ctx.sign_j.push_back(k);
  return ctx;
}

/// Linear form of the Lagrangian rate and of the multiplier-rate equality
/// for one pair, in the unknowns (lamdot_i, lamdot_j, u):
///   Ldot = ci.lamdot_i + cj.lamdot_j + du.u + d0
///   Ei lamdot_i + Ej lamdot_j + Eu u + e0 = 0
struct PairLinearization {
  VectorXd ci, cj, du;
  double d0 = 0.0;
  MatrixXd Ei, Ej, Eu;
  VectorXd e0;
};

inline PairLinearization linearize(const PairContext& ctx) {
  const auto& Pi = ctx.placed_i;
  const auto& Pj = ctx.placed_j;
  const VectorXd& li = ctx.result.lam_i;
  const VectorXd& lj = ctx.result.lam_j;
  const Index nu = ctx.rates_i.inputs();
  const VectorXd gi = Pi.Abar.transpose() * li;  // Abar_i^T lam_i

  auto rate_terms = [&](const HRepRates& ri, const HRepRates& rj, double& ldot, VectorXd& eq) {
    ldot = -0.5 * gi.dot(ri.Adot.transpose() * li) - li.dot(ri.bdot) - lj.dot(rj.bdot);
    eq = ri.Adot.transpose() * li + rj.Adot.transpose() * lj;
  };

  PairLinearization lin;
  lin.ci = -0.5 * Pi.Abar * gi - Pi.bbar;
  lin.cj = -Pj.bbar;
  lin.Ei = Pi.Abar.transpose();
  lin.Ej = Pj.Abar.transpose();
  rate_terms(ctx.rates_i.drift, ctx.rates_j.drift, lin.d0, lin.e0);
  lin.du.resize(nu);
  lin.Eu.resize(Pi.dim(), nu);
  for (Index c = 0; c < nu; ++c) {
    double d;
    VectorXd e;
    rate_terms(ctx.rates_i.channels[c], ctx.rates_j.channels[c], d, e);
    lin.du(c) = d;
    lin.Eu.col(c) = e;
  }
  return lin;
}

/// Lagrangian rate for given multiplier rates and input.
inline double ldot_value(const PairContext& ctx, const VectorXd& lamdot_i, const VectorXd& lamdot_j,
                         const VectorXd& u) {
  if (lamdot_i.size() != ctx.placed_i.rows() || lamdot_j.size() != ctx.placed_j.rows() ||
      u.size() != ctx.rates_i.inputs())
    throw Error(ErrorCode::DimensionMismatch, "ldot_value argument sizes");
  const auto lin = linearize(ctx);
  return lin.ci.dot(lamdot_i) + lin.cj.dot(lamdot_j) + lin.du.dot(u) + lin.d0;
}

struct HdotResult {
  double g = 0.0;
  VectorXd lamdot_i;
  VectorXd lamdot_j;
};

inline constexpr double kDefaultLamdotBound = 1e3;

/// Maximum of Ldot over admissible multiplier rates at fixed input u.
inline HdotResult hdot_lp(const PairContext& ctx, const VectorXd& u, double M = kDefaultLamdotBound) {
  if (u.size() != ctx.rates_i.inputs()) throw Error(ErrorCode::DimensionMismatch, "input size");
  const auto lin = linearize(ctx);
  const Index ri = ctx.placed_i.rows(), rj = ctx.placed_j.rows();
  auto lp = QpProblem::zeros(ri + rj);
  lp.q << -lin.ci, -lin.cj;
  lp.Aeq.resize(lin.Ei.rows(), ri + rj);
  lp.Aeq << lin.Ei, lin.Ej;
  lp.beq = -(lin.Eu * u + lin.e0);
  lp.lb = VectorXd::Constant(ri + rj, -M);
  lp.ub = VectorXd::Constant(ri + rj, M);
  for (Index k : ctx.sign_i) lp.lb(k) = 0.0;
  for (Index k : ctx.sign_j) lp.lb(ri + k) = 0.0;
  const auto sol = solve_lp(lp);
  if (sol.status == QpStatus::Unbounded)
    throw Error(ErrorCode::SolverFailure, "derivative LP unbounded despite box");
  if (!sol.optimal())
    throw Error(ErrorCode::SolverFailure, std::string("derivative LP: ") + to_string(sol.status));
  HdotResult out;
  out.lamdot_i = sol.x.head(ri);
  out.lamdot_j = sol.x.tail(rj);
  out.g = -sol.objective + lin.du.dot(u) + lin.d0;
  return out;
}

/// Soft tracking row Vdot <= -alpha1 V + s with Vdot = LfV + LgV u.
struct ClfRow {
  double V = 0.0;
  double LfV = 0.0;
  VectorXd LgV;
  double alpha1 = 1.0;
  double slack_weight = 100.0;
};

struct ControllerConfig {
  double eps1 = 0.015;
  double eps2 = kDefaultEps2;
  double M = kDefaultLamdotBound;
  double gamma = 1.0;
  MatrixXd Q;
  VectorXd u_min;
  VectorXd u_max;
};

enum class FilterStatus { Optimal, Infeasible, SafetyViolated };

inline const char* to_string(FilterStatus s) {
  switch (s) {
    case FilterStatus::Optimal: return "Optimal";
    case FilterStatus::Infeasible: return "Infeasible";
    case FilterStatus::SafetyViolated: return "SafetyViolated";
  }
  return "Unknown";
}

struct PairDiagnostics {
  double h = 0.0;
  double ldot = 0.0;
  /// Ldot + gamma (h - eps1^2); nonnegative when the barrier row holds.
  double margin = 0.0;
};

struct ControlDecision {
  VectorXd u;
  std::vector<VectorXd> lamdot_i;
  std::vector<VectorXd> lamdot_j;
  double slack = 0.0;
  FilterStatus status = FilterStatus::Optimal;
  std::vector<PairDiagnostics> pairs;
  double solve_ms = 0.0;
  Index num_variables = 0;
  Index num_constraints = 0;
};

/// Size of an assembled safety-filter QP.
struct FilterSize {
  Index variables = 0;
  /// Equality rows + general inequality rows + sign rows on multiplier
  /// rates + one per input channel + one for the slack sign. The |lamdot| <= M
  /// box is a numerical safeguard and is not counted.
  Index constraints = 0;
};

namespace detail {

struct FilterAssembly {
  QpProblem qp;
  std::vector<PairLinearization> lin;
  std::vector<Index> offset;
  Index slack_index = -1;
  FilterSize size;
};

inline FilterAssembly assemble_filter(const std::vector<PairContext>& pairs, const VectorXd& u_nom,
                                      const ControllerConfig& cfg, const std::optional<ClfRow>& clf) {
  const Index nu = u_nom.size();
  FilterAssembly fa;
  Index n = nu;
  for (const auto& p : pairs) {
    if (p.rates_i.inputs() != nu) throw Error(ErrorCode::DimensionMismatch, "pair input count");
    fa.offset.push_back(n);
    n += p.placed_i.rows() + p.placed_j.rows();
  }
  if (clf) fa.slack_index = n++;

  const MatrixXd Q = cfg.Q.size() ? cfg.Q : MatrixXd::Identity(nu, nu);
  if (Q.rows() != nu || Q.cols() != nu) throw Error(ErrorCode::DimensionMismatch, "Q size");
  auto& qp = fa.qp;
  qp = QpProblem::zeros(n);
  qp.P.topLeftCorner(nu, nu) = 2.0 * Q;
  qp.q.head(nu) = -2.0 * Q * u_nom;
  if (clf) qp.P(fa.slack_index, fa.slack_index) = 2.0 * clf->slack_weight;

  qp.lb = VectorXd::Constant(n, -std::numeric_limits<double>::infinity());
  qp.ub = VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  if (cfg.u_min.size()) qp.lb.head(nu) = cfg.u_min;
  if (cfg.u_max.size()) qp.ub.head(nu) = cfg.u_max;

  Index eq_rows = 0;
  for (const auto& p : pairs) eq_rows += p.placed_i.dim();
  const Index in_rows = static_cast<Index>(pairs.size()) + (clf ? 1 : 0);
  qp.Aeq = MatrixXd::Zero(eq_rows, n);
  qp.beq = VectorXd::Zero(eq_rows);
  qp.Ain = MatrixXd::Zero(in_rows, n);
  qp.bin = VectorXd::Zero(in_rows);

  Index sign_rows = 0;
  Index er = 0;
  for (size_t k = 0; k < pairs.size(); ++k) {
    const auto& p = pairs[k];
    fa.lin.push_back(linearize(p));
    const auto& lin = fa.lin.back();
    const Index o = fa.offset[k], ri = p.placed_i.rows(), rj = p.placed_j.rows(), l = p.placed_i.dim();
    // -(Ldot) <= gamma (h - eps1^2)
    qp.Ain.block(k, 0, 1, nu) = -lin.du.transpose();
    qp.Ain.block(k, o, 1, ri) = -lin.ci.transpose();
    qp.Ain.block(k, o + ri, 1, rj) = -lin.cj.transpose();
    qp.bin(k) = lin.d0 + cfg.gamma * (p.result.h - cfg.eps1 * cfg.eps1);

    qp.Aeq.block(er, 0, l, nu) = lin.Eu;
    qp.Aeq.block(er, o, l, ri) = lin.Ei;
    qp.Aeq.block(er, o + ri, l, rj) = lin.Ej;
    qp.beq.segment(er, l) = -lin.e0;
    er += l;

    qp.lb.segment(o, ri + rj).setConstant(-cfg.M);
    qp.ub.segment(o, ri + rj).setConstant(cfg.M);
    for (Index s : p.sign_i) qp.lb(o + s) = 0.0;
    for (Index s : p.sign_j) qp.lb(o + ri + s) = 0.0;
    sign_rows += static_cast<Index>(p.sign_i.size() + p.sign_j.size());
  }
  if (clf) {
    const Index row = in_rows - 1;
    if (clf->LgV.size() != nu) throw Error(ErrorCode::DimensionMismatch, "CLF gradient size");
    qp.Ain.block(row, 0, 1, nu) = clf->LgV.transpose();
    qp.Ain(row, fa.slack_index) = -1.0;
    qp.bin(row) = -clf->alpha1 * clf->V - clf->LfV;
    qp.lb(fa.slack_index) = 0.0;
  }
  fa.size.variables = n;
  fa.size.constraints = eq_rows + in_rows + sign_rows + nu + (clf ? 1 : 0);
  return fa;
}

}  // namespace detail

inline FilterSize filter_size(const std::vector<PairContext>& pairs, const VectorXd& u_nom,
                              const ControllerConfig& cfg, const std::optional<ClfRow>& clf) {
  return detail::assemble_filter(pairs, u_nom, cfg, clf).size;
}

/// NCBF-QP safety filter over all pairs with an optional CLF objective row.
inline ControlDecision solve_safety_filter(const std::vector<PairContext>& pairs, const VectorXd& u_nom,
                                           const ControllerConfig& cfg,
                                           const std::optional<ClfRow>& clf = std::nullopt,
                                           const std::optional<VectorXd>& u_hint = std::nullopt) {
  const Index nu = u_nom.size();
  if (!u_nom.allFinite()) throw Error(ErrorCode::DimensionMismatch, "nominal input is not finite");
  ControlDecision dec;
  dec.u = VectorXd::Zero(nu);
  const double margin = cfg.eps1 * cfg.eps1;
  for (const auto& p : pairs) {
    PairDiagnostics d;
    d.h = p.result.h;
    dec.pairs.push_back(d);
  }
  for (const auto& p : pairs)
    if (p.result.h < margin) {
      dec.status = FilterStatus::SafetyViolated;
      return dec;
    }

  auto fa = detail::assemble_filter(pairs, u_nom, cfg, clf);
  dec.num_variables = fa.size.variables;
  dec.num_constraints = fa.size.constraints;

  // Candidate start: hinted input (default zero), zero multiplier rates and
  // the smallest admissible slack. The solver falls back to phase 1 if it is
  // not feasible.
  VectorXd x0 = VectorXd::Zero(fa.size.variables);
  if (u_hint) x0.head(nu) = *u_hint;
  if (clf) x0(fa.slack_index) = std::max(0.0, clf->LgV.dot(x0.head(nu)) + clf->alpha1 * clf->V + clf->LfV);
  fa.qp.start = x0;

  const auto t0 = std::chrono::steady_clock::now();
  const auto sol = solve_qp(fa.qp);
  dec.solve_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

  if (sol.status == QpStatus::Infeasible) {
    dec.status = FilterStatus::Infeasible;
    return dec;
  }
  if (!sol.optimal())
    throw Error(ErrorCode::SolverFailure, std::string("safety filter QP: ") + to_string(sol.status));

  dec.status = FilterStatus::Optimal;
  dec.u = sol.x.head(nu);
  if (cfg.u_min.size()) dec.u = dec.u.cwiseMax(cfg.u_min);
  if (cfg.u_max.size()) dec.u = dec.u.cwiseMin(cfg.u_max);
  if (clf) dec.slack = std::max(0.0, sol.x(fa.slack_index));
  for (size_t k = 0; k < pairs.size(); ++k) {
    const auto& p = pairs[k];
    const auto& lin = fa.lin[k];
    const Index o = fa.offset[k], ri = p.placed_i.rows(), rj = p.placed_j.rows();
    dec.lamdot_i.push_back(sol.x.segment(o, ri));
    dec.lamdot_j.push_back(sol.x.segment(o + ri, rj));
    auto& d = dec.pairs[k];
    d.ldot = lin.ci.dot(dec.lamdot_i.back()) + lin.cj.dot(dec.lamdot_j.back()) + lin.du.dot(dec.u) + lin.d0;
    d.margin = d.ldot + cfg.gamma * (p.result.h - margin);
  }
  return dec;
}

}  // namespace dualcbf
