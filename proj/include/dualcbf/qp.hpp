#pragma once

/**
 * @file
 * @brief Small dense convex QP / LP solver.
 *
 * Problems have the form
 *
 *   min  1/2 x^T P x + q^T x
 *   s.t. Aeq x  = beq
 *        Ain x <= bin
 *        lb <= x <= ub
 *
 * with P symmetric positive semidefinite. The solver is a primal active-set
 * method: a phase-1 LP finds a feasible point, then working-set iterations
 * move along null-space directions of the active rows. Singular reduced
 * Hessians (LPs, distance QPs) are handled with a pivoted Cholesky that
 * separates Newton steps from zero-curvature rays, so unbounded problems are
 * detected rather than regularized away. Multipliers are exact KKT
 * multipliers of the final working set.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dualcbf/errors.hpp"

namespace dualcbf {

enum class QpStatus { Optimal, Infeasible, Unbounded, MaxIter };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "Optimal";
    case QpStatus::Infeasible: return "Infeasible";
    case QpStatus::Unbounded: return "Unbounded";
    case QpStatus::MaxIter: return "MaxIter";
  }
  return "Unknown";
}

/// Fixed solver tolerances. Downstream active-set thresholds assume these.
struct QpTolerances {
  static constexpr double feasibility = 1e-8;
  static constexpr double stationarity = 1e-7;
  static constexpr double dual_sign = 1e-9;
  static constexpr double symmetry = 1e-12;
};

struct QpProblem {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd Aeq;
  Eigen::VectorXd beq;
  Eigen::MatrixXd Ain;
  Eigen::VectorXd bin;
  /// Optional box; empty means no bound, entries may be +-infinity.
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;
  /// Optional starting guess. Used as the phase-1 start; skipped if it is
  /// not feasible.
  std::optional<Eigen::VectorXd> start;

  /// Zero-filled problem with n variables and no constraints.
  static QpProblem zeros(Eigen::Index n) {
    QpProblem p;
    p.P = Eigen::MatrixXd::Zero(n, n);
    p.q = Eigen::VectorXd::Zero(n);
    p.Aeq.resize(0, n);
    p.beq.resize(0);
    p.Ain.resize(0, n);
    p.bin.resize(0);
    return p;
  }

  Eigen::Index num_vars() const { return q.size(); }
};

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd dual_eq;
  Eigen::VectorXd dual_in;
  Eigen::VectorXd dual_lb;
  Eigen::VectorXd dual_ub;
  QpStatus status = QpStatus::MaxIter;
  double objective = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;

  bool optimal() const { return status == QpStatus::Optimal; }
};

namespace detail {

/// Pivoted Cholesky of a PSD matrix: H(perm, perm) ~= L L^T with L having
/// `rank` columns. Pivots below `tol` terminate the factorization.
struct PivotedCholesky {
  Eigen::MatrixXd L;
  std::vector<Eigen::Index> perm;
  Eigen::Index rank = 0;

  PivotedCholesky(const Eigen::MatrixXd& H, double tol) {
    const Eigen::Index n = H.rows();
    Eigen::MatrixXd A = H;
    perm.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) perm[i] = i;
    Eigen::Index j = 0;
    for (; j < n; ++j) {
      Eigen::Index piv = j;
      for (Eigen::Index i = j + 1; i < n; ++i)
        if (A(i, i) > A(piv, piv)) piv = i;
      if (A(piv, piv) <= tol) break;
      if (piv != j) {
        A.row(j).swap(A.row(piv));
        A.col(j).swap(A.col(piv));
        std::swap(perm[j], perm[piv]);
      }
      const double d = std::sqrt(A(j, j));
      A(j, j) = d;
      const Eigen::Index rest = n - j - 1;
      if (rest > 0) {
        A.col(j).tail(rest) /= d;
        A.bottomRightCorner(rest, rest).noalias() -=
            A.col(j).tail(rest) * A.col(j).tail(rest).transpose();
      }
    }
    rank = j;
    L = A.leftCols(rank).triangularView<Eigen::Lower>();
  }
};

struct WorkingProblem {
  const Eigen::MatrixXd* P = nullptr;  // nullptr means P = 0
  Eigen::VectorXd q;
  Eigen::MatrixXd E;  // linearly independent equality rows
  Eigen::VectorXd e;
  Eigen::MatrixXd G;  // inequality rows G x <= h
  Eigen::VectorXd h;
};

struct WorkingResult {
  QpStatus status = QpStatus::MaxIter;
  Eigen::VectorXd x;
  Eigen::VectorXd mu_eq;
  Eigen::VectorXd mu_in;
  int iterations = 0;
};

inline double inf_norm(const Eigen::VectorXd& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

/// Primal active-set iterations from a feasible x with working set W
/// (inequality indices whose rows are linearly independent together with E).
inline WorkingResult run_active_set(const WorkingProblem& wp, Eigen::VectorXd x,
                                    std::vector<Eigen::Index> W, int max_iter) {
  using Eigen::Index;
  using Eigen::MatrixXd;
  using Eigen::VectorXd;

  const Index n = x.size();
  const Index me = wp.E.rows();
  const Index m = wp.G.rows();

  VectorXd row_norm(m);
  for (Index k = 0; k < m; ++k) row_norm(k) = wp.G.row(k).norm();
  std::vector<char> in_w(m, 0);
  for (Index k : W) in_w[k] = 1;

  WorkingResult out;
  bool last_step_degenerate = false;
  // Set after a full, unblocked Newton step: x already minimizes over the
  // current working set, so go straight to the multiplier check.
  bool at_subspace_min = false;

  auto gradient = [&](const VectorXd& xx) {
    VectorXd g = wp.q;
    if (wp.P) g.noalias() += (*wp.P) * xx;
    return g;
  };

  // Ratio test along d; returns (alpha, index) with index -1 if unblocked.
  auto ratio_test = [&](const VectorXd& d, double cap) {
    double best = cap;
    Index blocking = -1;
    const double dn = d.norm();
    for (Index k = 0; k < m; ++k) {
      if (in_w[k] || row_norm(k) == 0.0) continue;
      const double ad = wp.G.row(k).dot(d);
      if (ad <= 1e-12 * row_norm(k) * dn) continue;
      const double slack = std::max(0.0, wp.h(k) - wp.G.row(k).dot(x));
      const double alpha = slack / ad;
      if (!std::isfinite(best) || alpha < best - 1e-14 * (1.0 + std::abs(best))) {
        best = alpha;
        blocking = k;
      }
    }
    return std::make_pair(best, blocking);
  };

  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it + 1;
    const Index k = me + static_cast<Index>(W.size());
    const VectorXd g = gradient(x);
    const double gscale = 1.0 + inf_norm(g);

    MatrixXd AWt(n, k);
    if (me > 0) AWt.leftCols(me) = wp.E.transpose();
    for (Index j = 0; j < static_cast<Index>(W.size()); ++j)
      AWt.col(me + j) = wp.G.row(W[j]).transpose();

    Eigen::HouseholderQR<MatrixXd> qr(AWt);
    MatrixXd Q = MatrixXd::Identity(n, n);
    if (k > 0) Q = qr.householderQ();
    const Index nz = n - k;

    VectorXd step = VectorXd::Zero(n);
    bool ray = false;
    if (nz > 0 && !at_subspace_min) {
      const MatrixXd Z = Q.rightCols(nz);
      const VectorXd gr = Z.transpose() * g;
      MatrixXd Hr = MatrixXd::Zero(nz, nz);
      if (wp.P) Hr.noalias() = Z.transpose() * (*wp.P) * Z;
      const double hscale = std::max(1.0, Hr.diagonal().cwiseAbs().maxCoeff());
      PivotedCholesky pc(Hr, 1e-11 * hscale);
      const Index r = pc.rank;

      VectorXd grp(nz);
      for (Index i = 0; i < nz; ++i) grp(i) = gr(pc.perm[i]);

      VectorXd w1 = VectorXd::Zero(r);
      if (r > 0)
        w1 = pc.L.topLeftCorner(r, r).triangularView<Eigen::Lower>().solve(-grp.head(r));
      VectorXd yp = VectorXd::Zero(nz);
      VectorXd proj = VectorXd::Zero(nz);
      if (r < nz) {
        // Null space of the permuted reduced Hessian is spanned by
        // N = [-L11^-T L21^T; I]; N^T g' reduces to the block residual.
        const MatrixXd L21 = pc.L.bottomLeftCorner(nz - r, r);
        const VectorXd res2 = grp.tail(nz - r) + L21 * w1;
        MatrixXd N(nz, nz - r);
        if (r > 0) {
          N.topRows(r) = -pc.L.topLeftCorner(r, r)
                              .transpose()
                              .triangularView<Eigen::Upper>()
                              .solve(L21.transpose());
        }
        N.bottomRows(nz - r).setIdentity();
        const VectorXd c = (N.transpose() * N).ldlt().solve(res2);
        proj = N * c;
      }
      if (inf_norm(proj) > 1e-9 * gscale) {
        ray = true;
        yp = -proj;
      } else if (r > 0) {
        yp.head(r) = pc.L.topLeftCorner(r, r)
                         .transpose()
                         .triangularView<Eigen::Upper>()
                         .solve(w1);
      }
      VectorXd y(nz);
      for (Index i = 0; i < nz; ++i) y(pc.perm[i]) = yp(i);
      step = Z * y;
    }

    if (ray) {
      auto [alpha, blocking] = ratio_test(step, std::numeric_limits<double>::infinity());
      if (blocking < 0) {
        out.status = QpStatus::Unbounded;
        out.x = x;
        return out;
      }
      x += alpha * step;
      last_step_degenerate = alpha * step.norm() <= 1e-14 * (1.0 + x.norm());
      W.push_back(blocking);
      in_w[blocking] = 1;
      continue;
    }

    if (inf_norm(step) > 1e-12 * (1.0 + inf_norm(x))) {
      auto [alpha, blocking] = ratio_test(step, 1.0);
      x += alpha * step;
      last_step_degenerate = alpha * step.norm() <= 1e-14 * (1.0 + x.norm());
      if (blocking >= 0) {
        W.push_back(blocking);
        in_w[blocking] = 1;
      } else {
        at_subspace_min = true;
      }
      continue;
    }

    // Subspace minimizer reached: KKT multipliers of the working set.
    VectorXd mu = VectorXd::Zero(k);
    if (k > 0) {
      const VectorXd qtg = Q.transpose() * g;
      mu = -qr.matrixQR().topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(
          qtg.head(k));
    }
    Index drop = -1;
    double most_negative = -QpTolerances::dual_sign * gscale;
    for (Index j = 0; j < static_cast<Index>(W.size()); ++j) {
      const double v = mu(me + j);
      if (last_step_degenerate) {
        // Bland's rule at degenerate points: lowest row index leaves.
        if (v < -QpTolerances::dual_sign * gscale && (drop < 0 || W[j] < W[drop])) drop = j;
      } else if (v < most_negative ||
                 (drop >= 0 && v == most_negative && W[j] < W[drop])) {
        most_negative = v;
        drop = j;
      }
    }
    if (drop < 0) {
      out.status = QpStatus::Optimal;
      out.x = x;
      out.mu_eq = mu.head(me);
      out.mu_in = VectorXd::Zero(m);
      for (Index j = 0; j < static_cast<Index>(W.size()); ++j)
        out.mu_in(W[j]) = std::max(0.0, mu(me + j));
      return out;
    }
    in_w[W[drop]] = 0;
    W.erase(W.begin() + drop);
    at_subspace_min = false;
  }
  out.status = QpStatus::MaxIter;
  out.x = x;
  return out;
}

/// Greedy selection of rows (in index order) that are linearly independent
/// of `basis` and of each other. `basis` holds orthonormal columns and is
/// extended in place.
inline bool extend_basis(Eigen::MatrixXd& basis, const Eigen::VectorXd& row) {
  const double nrm = row.norm();
  if (nrm == 0.0) return false;
  Eigen::VectorXd v = row;
  for (int pass = 0; pass < 2; ++pass)
    if (basis.cols() > 0) v -= basis * (basis.transpose() * v);
  if (v.norm() <= 1e-9 * nrm) return false;
  basis.conservativeResize(row.size(), basis.cols() + 1);
  basis.col(basis.cols() - 1) = v / v.norm();
  return true;
}

}  // namespace detail

/// Active-set solver instance. Holds no state between solves beyond scratch,
/// but is not meant to be shared across threads.
class ActiveSetSolver {
 public:
  QpSolution solve(const QpProblem& prob) const {
    using Eigen::Index;
    using Eigen::MatrixXd;
    using Eigen::VectorXd;

    const Index n = prob.q.size();
    check_dimensions(prob, n);
    const bool p_zero = prob.P.cwiseAbs().maxCoeff() == 0.0;
    if (!p_zero) check_psd(prob.P);

    // Inequality rows: Ain, then finite lower bounds, then finite upper bounds.
    enum class Origin { Row, Lower, Upper };
    std::vector<std::pair<Origin, Index>> origin;
    std::vector<std::pair<VectorXd, double>> rows;
    for (Index i = 0; i < prob.Ain.rows(); ++i) {
      rows.emplace_back(prob.Ain.row(i).transpose(), prob.bin(i));
      origin.emplace_back(Origin::Row, i);
    }
    QpSolution sol;
    for (Index i = 0; i < prob.lb.size(); ++i) {
      if (prob.ub.size() == n && prob.lb(i) > prob.ub(i)) {
        sol.status = QpStatus::Infeasible;
        sol.x = VectorXd::Zero(n);
        return sol;
      }
      if (std::isfinite(prob.lb(i))) {
        rows.emplace_back(-VectorXd::Unit(n, i), -prob.lb(i));
        origin.emplace_back(Origin::Lower, i);
      }
    }
    for (Index i = 0; i < prob.ub.size(); ++i) {
      if (std::isfinite(prob.ub(i))) {
        rows.emplace_back(VectorXd::Unit(n, i), prob.ub(i));
        origin.emplace_back(Origin::Upper, i);
      }
    }
    const Index m = static_cast<Index>(rows.size());
    detail::WorkingProblem wp;
    wp.P = p_zero ? nullptr : &prob.P;
    wp.q = prob.q;
    wp.G.resize(m, n);
    wp.h.resize(m);
    for (Index k = 0; k < m; ++k) {
      wp.G.row(k) = rows[k].first.transpose();
      wp.h(k) = rows[k].second;
    }

    // Independent equality rows.
    MatrixXd basis(n, 0);
    std::vector<Index> eq_sel;
    for (Index i = 0; i < prob.Aeq.rows(); ++i)
      if (detail::extend_basis(basis, prob.Aeq.row(i).transpose())) eq_sel.push_back(i);
    wp.E.resize(static_cast<Index>(eq_sel.size()), n);
    wp.e.resize(static_cast<Index>(eq_sel.size()));
    for (Index j = 0; j < static_cast<Index>(eq_sel.size()); ++j) {
      wp.E.row(j) = prob.Aeq.row(eq_sel[j]);
      wp.e(j) = prob.beq(eq_sel[j]);
    }

    const double eq_tol = QpTolerances::feasibility * (1.0 + detail::inf_norm(prob.beq));
    const double in_tol = QpTolerances::feasibility * (1.0 + detail::inf_norm(wp.h)) * 0.1;

    // Starting point on the equality manifold.
    VectorXd x = prob.start && prob.start->size() == n ? *prob.start : VectorXd::Zero(n);
    if (!prob.start) {
      for (Index i = 0; i < n; ++i) {
        if (prob.lb.size() == n && std::isfinite(prob.lb(i))) x(i) = std::max(x(i), prob.lb(i));
        if (prob.ub.size() == n && std::isfinite(prob.ub(i))) x(i) = std::min(x(i), prob.ub(i));
      }
    }
    if (wp.E.rows() > 0) {
      const VectorXd r = wp.E * x - wp.e;
      if (detail::inf_norm(r) > 0.0) {
        const MatrixXd EEt = wp.E * wp.E.transpose();
        x -= wp.E.transpose() * EEt.ldlt().solve(r);
      }
    }
    if (prob.Aeq.rows() > 0 &&
        detail::inf_norm(prob.Aeq * x - prob.beq) > eq_tol) {
      sol.status = QpStatus::Infeasible;
      sol.x = x;
      return sol;
    }

    const int max_iter = 50 * static_cast<int>(n + m + prob.Aeq.rows()) + 50;
    int iterations = 0;

    // Phase 1: min t s.t. E x = e, G x - t <= h, t >= 0.
    double viol = m > 0 ? (wp.G * x - wp.h).maxCoeff() : 0.0;
    if (viol > in_tol) {
      detail::WorkingProblem p1;
      p1.q = VectorXd::Unit(n + 1, n);
      p1.E = MatrixXd::Zero(wp.E.rows(), n + 1);
      p1.E.leftCols(n) = wp.E;
      p1.e = wp.e;
      p1.G = MatrixXd::Zero(m + 1, n + 1);
      p1.G.topLeftCorner(m, n) = wp.G;
      p1.G.col(n).head(m).setConstant(-1.0);
      p1.G(m, n) = -1.0;
      p1.h = VectorXd::Zero(m + 1);
      p1.h.head(m) = wp.h;
      VectorXd x1(n + 1);
      x1 << x, viol;
      auto r1 = detail::run_active_set(p1, x1, {}, max_iter);
      iterations += r1.iterations;
      if (r1.status != QpStatus::Optimal) {
        sol.status = QpStatus::MaxIter;
        sol.x = r1.x.head(n);
        sol.iterations = iterations;
        return sol;
      }
      if (r1.x(n) > in_tol) {
        sol.status = QpStatus::Infeasible;
        sol.x = r1.x.head(n);
        sol.iterations = iterations;
        return sol;
      }
      x = r1.x.head(n);
    }

    // Phase 2 from the active rows at x.
    std::vector<Eigen::Index> W;
    {
      MatrixXd ws_basis(n, 0);
      for (Index i = 0; i < wp.E.rows(); ++i)
        detail::extend_basis(ws_basis, wp.E.row(i).transpose());
      for (Index k = 0; k < m; ++k) {
        if (ws_basis.cols() >= n) break;
        const double res = wp.h(k) - wp.G.row(k).dot(x);
        if (std::abs(res) <= 10.0 * in_tol && detail::extend_basis(ws_basis, wp.G.row(k).transpose()))
          W.push_back(k);
      }
    }
    auto r2 = detail::run_active_set(wp, x, W, max_iter);
    iterations += r2.iterations;

    sol.status = r2.status;
    sol.x = r2.x;
    sol.iterations = iterations;
    sol.objective = objective(prob, sol.x);
    if (r2.status != QpStatus::Optimal) return sol;

    sol.dual_eq = VectorXd::Zero(prob.Aeq.rows());
    for (Index j = 0; j < static_cast<Index>(eq_sel.size()); ++j) sol.dual_eq(eq_sel[j]) = r2.mu_eq(j);
    sol.dual_in = VectorXd::Zero(prob.Ain.rows());
    sol.dual_lb = VectorXd::Zero(prob.lb.size());
    sol.dual_ub = VectorXd::Zero(prob.ub.size());
    for (Index k = 0; k < m; ++k) {
      const auto [kind, idx] = origin[k];
      switch (kind) {
        case Origin::Row: sol.dual_in(idx) = r2.mu_in(k); break;
        case Origin::Lower: sol.dual_lb(idx) = r2.mu_in(k); break;
        case Origin::Upper: sol.dual_ub(idx) = r2.mu_in(k); break;
      }
    }
    return sol;
  }

  static double objective(const QpProblem& prob, const Eigen::VectorXd& x) {
    return 0.5 * x.dot(prob.P * x) + prob.q.dot(x);
  }

 private:
  static void check_dimensions(const QpProblem& p, Eigen::Index n) {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::DimensionMismatch, what); };
    if (p.P.rows() != n || p.P.cols() != n) fail("P must be n x n");
    if (p.Aeq.cols() != n && p.Aeq.rows() > 0) fail("Aeq column count");
    if (p.Aeq.rows() != p.beq.size()) fail("Aeq/beq row count");
    if (p.Ain.cols() != n && p.Ain.rows() > 0) fail("Ain column count");
    if (p.Ain.rows() != p.bin.size()) fail("Ain/bin row count");
    if (p.lb.size() != 0 && p.lb.size() != n) fail("lb size");
    if (p.ub.size() != 0 && p.ub.size() != n) fail("ub size");
    if (p.start && p.start->size() != n) fail("start size");
  }

  static void check_psd(const Eigen::MatrixXd& P) {
    const double scale = std::max(1.0, P.cwiseAbs().maxCoeff());
    if ((P - P.transpose()).cwiseAbs().maxCoeff() > QpTolerances::symmetry * scale)
      throw Error(ErrorCode::NotPsd, "P is not symmetric");
    Eigen::MatrixXd shifted = P;
    shifted.diagonal().array() += 1e-12 * scale;
    Eigen::LLT<Eigen::MatrixXd> llt(shifted);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::NotPsd, "P is not positive semidefinite");
  }
};

inline QpSolution solve_qp(const QpProblem& prob) { return ActiveSetSolver{}.solve(prob); }

/// LP entry point; P must be zero (an empty P is accepted and zero-filled).
inline QpSolution solve_lp(QpProblem prob) {
  const Eigen::Index n = prob.q.size();
  if (prob.P.size() == 0) prob.P = Eigen::MatrixXd::Zero(n, n);
  if (prob.P.rows() == n && prob.P.cols() == n && prob.P.cwiseAbs().maxCoeff() != 0.0)
    throw Error(ErrorCode::DimensionMismatch, "solve_lp requires P = 0");
  return ActiveSetSolver{}.solve(prob);
}

}  // namespace dualcbf
