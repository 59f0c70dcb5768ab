#pragma once

#include <Eigen/Dense>

#include <vector>

#include "dualcbf/errors.hpp"
#include "dualcbf/geometry.hpp"
#include "dualcbf/qp.hpp"

namespace dualcbf {

/// Multipliers above this are treated as strictly positive.
inline constexpr double kDefaultEps2 = 1e-5;

struct PrimalDistance {
  double h = 0.0;
  VectorXd zi;
  VectorXd zj;
};

struct DistanceResult {
  double h = 0.0;
  VectorXd zi;
  VectorXd zj;
  VectorXd sstar;
  VectorXd lam_i;
  VectorXd lam_j;
  std::vector<Index> act_i;
  std::vector<Index> act_j;
};

struct DualProgramResult {
  double value = 0.0;
  VectorXd lam_i;
  VectorXd lam_j;
};

namespace detail {

inline QpProblem distance_qp(const PlacedHRep& Pi, const PlacedHRep& Pj) {
  if (Pi.dim() != Pj.dim()) throw Error(ErrorCode::DimensionMismatch, "pair dimension mismatch");
  const Index l = Pi.dim();
  const Index ri = Pi.rows(), rj = Pj.rows();
  auto qp = QpProblem::zeros(2 * l);
  const MatrixXd I = MatrixXd::Identity(l, l);
  qp.P << 2 * I, -2 * I, -2 * I, 2 * I;
  qp.Ain = MatrixXd::Zero(ri + rj, 2 * l);
  qp.Ain.topLeftCorner(ri, l) = Pi.Abar;
  qp.Ain.bottomRightCorner(rj, l) = Pj.Abar;
  qp.bin.resize(ri + rj);
  qp.bin << Pi.bbar, Pj.bbar;
  return qp;
}

inline void check_multipliers(const VectorXd& lam_i, const VectorXd& lam_j, const PlacedHRep& Pi,
                              const PlacedHRep& Pj) {
  if (lam_i.size() != Pi.rows() || lam_j.size() != Pj.rows())
    throw Error(ErrorCode::DimensionMismatch, "multiplier sizes must match face counts");
}

/// Distances at or below this are reported as contact.
constexpr double kContactH = 1e-12;

}  // namespace detail

inline PrimalDistance min_distance_primal(const PlacedHRep& Pi, const PlacedHRep& Pj) {
  const auto sol = solve_qp(detail::distance_qp(Pi, Pj));
  if (!sol.optimal())
    throw Error(ErrorCode::SolverFailure, std::string("distance QP: ") + to_string(sol.status));
  const Index l = Pi.dim();
  PrimalDistance out;
  out.zi = sol.x.head(l);
  out.zj = sol.x.tail(l);
  out.h = (out.zi - out.zj).squaredNorm();
  if (out.h <= detail::kContactH) out.h = 0.0;
  return out;
}

/// Value of the dual function: -1/4 |lam_i Abar_i|^2 - lam_i bbar_i - lam_j bbar_j.
inline double lagrangian_value(const VectorXd& lam_i, const VectorXd& lam_j, const PlacedHRep& Pi,
                               const PlacedHRep& Pj) {
  detail::check_multipliers(lam_i, lam_j, Pi, Pj);
  const VectorXd g = Pi.Abar.transpose() * lam_i;
  return -0.25 * g.squaredNorm() - lam_i.dot(Pi.bbar) - lam_j.dot(Pj.bbar);
}

/// Full dual solution. Multipliers are read from the primal solve; they are
/// already in the dual's convention (lam_i Abar_i = -2 sstar^T).
inline DistanceResult min_distance_dual(const PlacedHRep& Pi, const PlacedHRep& Pj,
                                        double eps2 = kDefaultEps2) {
  const auto sol = solve_qp(detail::distance_qp(Pi, Pj));
  if (!sol.optimal())
    throw Error(ErrorCode::SolverFailure, std::string("distance QP: ") + to_string(sol.status));
  const Index l = Pi.dim();
  const Index ri = Pi.rows(), rj = Pj.rows();
  DistanceResult out;
  out.zi = sol.x.head(l);
  out.zj = sol.x.tail(l);
  out.sstar = out.zi - out.zj;
  out.h = out.sstar.squaredNorm();
  out.lam_i = sol.dual_in.head(ri);
  out.lam_j = sol.dual_in.tail(rj);
  if (out.h <= detail::kContactH) {
    out.h = 0.0;
    out.sstar.setZero();
    out.lam_i.setZero();
    out.lam_j.setZero();
  }

  auto collect = [&](const VectorXd& lam, const PlacedHRep& P, const VectorXd& z) {
    std::vector<Index> act;
    for (Index k = 0; k < P.rows(); ++k)
      if (lam(k) > eps2 || std::abs(P.Abar.row(k).dot(z) - P.bbar(k)) <= 1e-7) act.push_back(k);
    if (!act.empty() && static_cast<Index>(act.size()) <= P.dim()) {
      MatrixXd rows(static_cast<Index>(act.size()), P.dim());
      for (Index a = 0; a < static_cast<Index>(act.size()); ++a) rows.row(a) = P.Abar.row(act[a]);
      Eigen::FullPivLU<MatrixXd> lu(rows);
      lu.setThreshold(1e-9);
      if (lu.rank() < static_cast<Index>(act.size()))
        throw Error(ErrorCode::DualDegenerate, "active face normals are linearly dependent");
    } else if (static_cast<Index>(act.size()) > P.dim()) {
      throw Error(ErrorCode::DualDegenerate, "more active faces than dimensions");
    }
    return act;
  };
  out.act_i = collect(out.lam_i, Pi, out.zi);
  out.act_j = collect(out.lam_j, Pj, out.zj);
  return out;
}

/// Independent solve of the dual program: max L(lam) s.t.
/// lam_i Abar_i + lam_j Abar_j = 0, lam >= 0.
inline DualProgramResult solve_dual_program(const PlacedHRep& Pi, const PlacedHRep& Pj) {
  if (Pi.dim() != Pj.dim()) throw Error(ErrorCode::DimensionMismatch, "pair dimension mismatch");
  const Index l = Pi.dim();
  const Index ri = Pi.rows(), rj = Pj.rows();
  auto qp = QpProblem::zeros(ri + rj);
  qp.P.topLeftCorner(ri, ri) = 0.5 * Pi.Abar * Pi.Abar.transpose();
  qp.q << Pi.bbar, Pj.bbar;
  qp.Aeq.resize(l, ri + rj);
  qp.Aeq << Pi.Abar.transpose(), Pj.Abar.transpose();
  qp.beq = VectorXd::Zero(l);
  qp.lb = VectorXd::Zero(ri + rj);
  const auto sol = solve_qp(qp);
  if (!sol.optimal())
    throw Error(ErrorCode::SolverFailure, std::string("dual QP: ") + to_string(sol.status));
  DualProgramResult out;
  out.lam_i = sol.x.head(ri);
  out.lam_j = sol.x.tail(rj);
  out.value = -sol.objective;
  return out;
}

}  // namespace dualcbf
