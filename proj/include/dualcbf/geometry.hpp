#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "dualcbf/errors.hpp"
#include "dualcbf/qp.hpp"

namespace dualcbf {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Skew-symmetric matrix with hat(v) * w = v x w.
inline Eigen::Matrix3d hat(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

inline Eigen::Matrix2d rotation2d(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Eigen::Matrix2d R;
  R << c, -s, s, c;
  return R;
}

/// Rigid placement of a body frame: world point = R * body point + p.
struct Pose {
  VectorXd p;
  MatrixXd R;

  static Pose identity(Index dim) { return {VectorXd::Zero(dim), MatrixXd::Identity(dim, dim)}; }

  static Pose planar(double x, double y, double theta) {
    Pose pose{VectorXd(2), rotation2d(theta)};
    pose.p << x, y;
    return pose;
  }

  static Pose spatial(const Eigen::Vector3d& p, const Eigen::Matrix3d& R) {
    Pose pose{p, R};
    pose.validate();
    return pose;
  }

  Index dim() const { return p.size(); }

  void validate() const {
    const Index l = p.size();
    if ((l != 2 && l != 3) || R.rows() != l || R.cols() != l)
      throw Error(ErrorCode::DimensionMismatch, "pose dimension must be 2 or 3");
    const double ortho = (R.transpose() * R - MatrixXd::Identity(l, l)).cwiseAbs().maxCoeff();
    const double det = R.determinant();
    if (ortho > 1e-9 || std::abs(det - 1.0) > 1e-9)
      throw Error(ErrorCode::InvalidPose, "rotation is not a proper orthonormal matrix");
  }
};

/// Translational and rotational state of a fully actuated 3D body.
struct RigidState {
  Eigen::Vector3d r = Eigen::Vector3d::Zero();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();

  Pose pose() const { return Pose{r, R}; }
};

struct PlacedHRep {
  MatrixXd Abar;
  VectorXd bbar;

  Index rows() const { return Abar.rows(); }
  Index dim() const { return Abar.cols(); }
};

struct HRepRates {
  MatrixXd Adot;
  VectorXd bdot;

  static HRepRates zero(Index rows, Index dim) {
    return {MatrixXd::Zero(rows, dim), VectorXd::Zero(rows)};
  }
};

namespace detail {

constexpr double kVertexFeasTol = 1e-9;
constexpr double kVertexDedupTol = 1e-9;

inline double active_tol(double b) { return 1e-7 * (1.0 + std::abs(b)); }

/// Row-combination vertex enumeration. Throws DegenerateVertex when a vertex
/// has more than `dim` active rows.
inline std::vector<VectorXd> enumerate_vertices(const MatrixXd& A, const VectorXd& b) {
  const Index r = A.rows();
  const Index l = A.cols();
  std::vector<VectorXd> out;
  std::vector<Index> idx(l);
  for (Index i = 0; i < l; ++i) idx[i] = i;
  MatrixXd M(l, l);
  VectorXd rhs(l);
  while (true) {
    for (Index i = 0; i < l; ++i) {
      M.row(i) = A.row(idx[i]);
      rhs(i) = b(idx[i]);
    }
    Eigen::FullPivLU<MatrixXd> lu(M);
    if (lu.rank() == l) {
      const VectorXd z = lu.solve(rhs);
      if (((A * z - b).array() <= kVertexFeasTol).all()) {
        bool dup = false;
        for (const auto& v : out)
          if ((v - z).cwiseAbs().maxCoeff() <= kVertexDedupTol) dup = true;
        if (!dup) out.push_back(z);
      }
    }
    Index k = l - 1;
    while (k >= 0 && idx[k] == r - l + k) --k;
    if (k < 0) break;
    ++idx[k];
    for (Index j = k + 1; j < l; ++j) idx[j] = idx[j - 1] + 1;
  }
  for (const auto& z : out) {
    Index active = 0;
    for (Index k = 0; k < r; ++k)
      if (std::abs(A.row(k).dot(z) - b(k)) <= active_tol(b(k))) ++active;
    if (active > l)
      throw Error(ErrorCode::DegenerateVertex,
                  "vertex with " + std::to_string(active) + " active rows");
  }
  return out;
}

}  // namespace detail

/// Validated H-representation {z : A z <= b}. Immutable after construction.
class Polytope {
 public:
  const MatrixXd& A() const { return A_; }
  const VectorXd& b() const { return b_; }
  Index rows() const { return A_.rows(); }
  Index dim() const { return A_.cols(); }
  const std::vector<VectorXd>& vertices() const { return vertices_; }

  /// Chebyshev radius found during validation.
  double inner_radius() const { return inner_radius_; }

  bool contains(const VectorXd& z, double tol = 1e-9) const {
    return ((A_ * z - b_).array() <= tol).all();
  }

 private:
  friend Polytope make_polytope(const MatrixXd& A, const VectorXd& b);
  Polytope(MatrixXd A, VectorXd b) : A_(std::move(A)), b_(std::move(b)) {}

  MatrixXd A_;
  VectorXd b_;
  std::vector<VectorXd> vertices_;
  double inner_radius_ = 0.0;
};

inline Polytope make_polytope(const MatrixXd& A, const VectorXd& b) {
  const Index r = A.rows();
  const Index l = A.cols();
  if (l != 2 && l != 3) throw Error(ErrorCode::DimensionMismatch, "polytope dimension must be 2 or 3");
  if (b.size() != r) throw Error(ErrorCode::DimensionMismatch, "A and b row counts differ");
  if (r < l + 1) throw Error(ErrorCode::Unbounded, "fewer than dim+1 half-spaces");
  for (Index k = 0; k < r; ++k)
    if (A.row(k).norm() == 0.0) throw Error(ErrorCode::RedundantRow, "zero row", static_cast<int>(k));

  Polytope poly(A, b);

  // Chebyshev center: max t s.t. a_k c + t |a_k| <= b_k, t <= 1.
  {
    auto lp = QpProblem::zeros(l + 1);
    lp.q(l) = -1.0;
    lp.Ain.resize(r + 1, l + 1);
    lp.Ain.setZero();
    lp.Ain.topLeftCorner(r, l) = A;
    lp.Ain.col(l).head(r) = A.rowwise().norm();
    lp.Ain(r, l) = 1.0;
    lp.bin.resize(r + 1);
    lp.bin << b, 1.0;
    const auto sol = solve_lp(lp);
    if (sol.status == QpStatus::Infeasible || (sol.optimal() && sol.x(l) <= 1e-9))
      throw Error(ErrorCode::EmptyInterior, "no strictly interior point");
    if (!sol.optimal()) throw Error(ErrorCode::SolverFailure, "Chebyshev center LP failed");
    poly.inner_radius_ = sol.x(l);
  }

  // Bounded iff the recession cone {d : A d <= 0} is trivial.
  for (Index k = 0; k < l; ++k) {
    for (double sign : {1.0, -1.0}) {
      auto lp = QpProblem::zeros(l);
      lp.q(k) = -sign;
      lp.Ain = A;
      lp.bin = VectorXd::Zero(r);
      lp.lb = VectorXd::Constant(l, -1.0);
      lp.ub = VectorXd::Constant(l, 1.0);
      const auto sol = solve_lp(lp);
      if (!sol.optimal()) throw Error(ErrorCode::SolverFailure, "recession cone LP failed");
      if (-sol.objective > 1e-9) throw Error(ErrorCode::Unbounded, "polytope is unbounded");
    }
  }

  // Row k is redundant iff max a_k z over the remaining rows stays <= b_k.
  for (Index k = 0; k < r; ++k) {
    auto lp = QpProblem::zeros(l);
    lp.q = -A.row(k).transpose();
    lp.Ain.resize(r - 1, l);
    lp.bin.resize(r - 1);
    for (Index i = 0, j = 0; i < r; ++i) {
      if (i == k) continue;
      lp.Ain.row(j) = A.row(i);
      lp.bin(j) = b(i);
      ++j;
    }
    const auto sol = solve_lp(lp);
    if (sol.status == QpStatus::Unbounded) continue;
    if (!sol.optimal()) throw Error(ErrorCode::SolverFailure, "redundancy LP failed");
    if (-sol.objective <= b(k) + 1e-9 * (1.0 + std::abs(b(k))))
      throw Error(ErrorCode::RedundantRow, "row " + std::to_string(k) + " is redundant",
                  static_cast<int>(k));
  }

  poly.vertices_ = detail::enumerate_vertices(A, b);
  if (static_cast<Index>(poly.vertices_.size()) < l + 1)
    throw Error(ErrorCode::Unbounded, "too few vertices");
  return poly;
}

inline const std::vector<VectorXd>& enumerate_vertices(const Polytope& poly) { return poly.vertices(); }

/// Axis-aligned box [lo, hi].
inline Polytope make_box(const VectorXd& lo, const VectorXd& hi) {
  const Index l = lo.size();
  MatrixXd A(2 * l, l);
  VectorXd b(2 * l);
  A.setZero();
  for (Index i = 0; i < l; ++i) {
    A(2 * i, i) = 1.0;
    b(2 * i) = hi(i);
    A(2 * i + 1, i) = -1.0;
    b(2 * i + 1) = -lo(i);
  }
  return make_polytope(A, b);
}

inline PlacedHRep place(const Polytope& poly, const Pose& pose) {
  if (pose.dim() != poly.dim()) throw Error(ErrorCode::DimensionMismatch, "pose/polytope dimension");
  PlacedHRep out;
  out.Abar = poly.A() * pose.R.transpose();
  out.bbar = poly.b() + out.Abar * pose.p;
  return out;
}

/// Rates of (Abar, bbar) for linear velocity `vel` (world frame) and angular
/// velocity `angvel` (scalar in 2D, body-frame 3-vector in 3D).
inline HRepRates hrep_rates(const Polytope& poly, const Pose& pose, const VectorXd& vel,
                            const VectorXd& angvel) {
  const Index l = poly.dim();
  if (pose.dim() != l || vel.size() != l || angvel.size() != (l == 2 ? 1 : 3))
    throw Error(ErrorCode::DimensionMismatch, "rate input dimensions");
  HRepRates out;
  if (l == 2) {
    Eigen::Matrix2d J;
    J << 0.0, -1.0, 1.0, 0.0;
    const MatrixXd Rdot = angvel(0) * J * pose.R;
    out.Adot = poly.A() * Rdot.transpose();
  } else {
    const Eigen::Vector3d w = angvel;
    out.Adot = -poly.A() * hat(w) * pose.R.transpose();
  }
  out.bdot = out.Adot * pose.p + poly.A() * pose.R.transpose() * vel;
  return out;
}

}  // namespace dualcbf
