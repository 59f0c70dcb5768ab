#pragma once

/**
 * @file
 * @brief Solver-free reference computations for tests.
 *
 * Everything here is brute force over vertices, edges and faces. Nothing in
 * this header calls the QP solver, so agreement with the optimization path
 * is an independent check.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "dualcbf/errors.hpp"
#include "dualcbf/geometry.hpp"

namespace dualcbf::oracle {

enum class Method { EdgePairs2D, FeaturePairs3D, SampledSweep, FiniteDiff, VertexEnum };

struct OracleReport {
  double value = 0.0;
  Method method = Method::VertexEnum;
  long samples = 0;
};

/// Vertex/edge/face incidence of a placed polytope.
struct Features {
  MatrixXd A;
  VectorXd b;
  std::vector<VectorXd> vertices;
  std::vector<std::pair<int, int>> edges;
  std::vector<std::vector<int>> face_vertices;

  static Features of(const PlacedHRep& P) {
    Features f;
    f.A = P.Abar;
    f.b = P.bbar;
    f.vertices = detail::enumerate_vertices(P.Abar, P.bbar);
    const Index r = P.rows(), l = P.dim();
    std::vector<std::vector<Index>> active(f.vertices.size());
    f.face_vertices.assign(r, {});
    for (size_t v = 0; v < f.vertices.size(); ++v)
      for (Index k = 0; k < r; ++k)
        if (std::abs(P.Abar.row(k).dot(f.vertices[v]) - P.bbar(k)) <= detail::active_tol(P.bbar(k))) {
          active[v].push_back(k);
          f.face_vertices[k].push_back(static_cast<int>(v));
        }
    for (size_t u = 0; u < f.vertices.size(); ++u)
      for (size_t v = u + 1; v < f.vertices.size(); ++v) {
        Index shared = 0;
        for (Index k : active[u])
          if (std::find(active[v].begin(), active[v].end(), k) != active[v].end()) ++shared;
        if (shared >= l - 1) f.edges.emplace_back(static_cast<int>(u), static_cast<int>(v));
      }
    return f;
  }

  Features translated(const VectorXd& c) const {
    Features f = *this;
    for (auto& v : f.vertices) v += c;
    f.b += A * c;
    return f;
  }

  bool contains(const VectorXd& z, double tol = 1e-12) const {
    return ((A * z - b).array() <= tol * (1.0 + b.cwiseAbs().array())).all();
  }
};

/// Squared distance between segments [p0,p1] and [q0,q1].
inline double segment_distance_sq(const VectorXd& p0, const VectorXd& p1, const VectorXd& q0,
                                  const VectorXd& q1) {
  const VectorXd d1 = p1 - p0, d2 = q1 - q0, r = p0 - q0;
  const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  double s = 0.0, t = 0.0;
  if (a <= 1e-300 && e <= 1e-300) return r.squaredNorm();
  if (a <= 1e-300) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= 1e-300) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double bb = d1.dot(d2);
      const double denom = a * e - bb * bb;
      s = denom > 0.0 ? std::clamp((bb * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (bb * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((bb - c) / a, 0.0, 1.0);
      }
    }
  }
  return (p0 + s * d1 - (q0 + t * d2)).squaredNorm();
}

/// True if the segment [p0,p1] meets the polytope (Cyrus-Beck clipping).
inline bool segment_hits(const Features& F, const VectorXd& p0, const VectorXd& p1) {
  double lo = 0.0, hi = 1.0;
  const VectorXd d = p1 - p0;
  for (Index k = 0; k < F.A.rows(); ++k) {
    const double num = F.b(k) - F.A.row(k).dot(p0);
    const double den = F.A.row(k).dot(d);
    const double tol = 1e-12 * (1.0 + std::abs(F.b(k)));
    if (std::abs(den) <= 1e-15) {
      if (num < -tol) return false;
      continue;
    }
    const double t = num / den;
    if (den > 0) hi = std::min(hi, t + tol);
    else lo = std::max(lo, t - tol);
    if (lo > hi) return false;
  }
  return true;
}

inline bool overlap(const Features& X, const Features& Y) {
  for (const auto& v : X.vertices)
    if (Y.contains(v)) return true;
  for (const auto& v : Y.vertices)
    if (X.contains(v)) return true;
  for (const auto& [u, v] : X.edges)
    if (segment_hits(Y, X.vertices[u], X.vertices[v])) return true;
  for (const auto& [u, v] : Y.edges)
    if (segment_hits(X, Y.vertices[u], Y.vertices[v])) return true;
  return false;
}

/// Squared distance from v to face k of F when the orthogonal projection
/// lands on the face; +inf otherwise.
inline double vertex_face_sq(const Features& F, Index k, const VectorXd& v) {
  const double gap = F.A.row(k).dot(v) - F.b(k);
  if (gap <= 0.0) return std::numeric_limits<double>::infinity();
  const double n2 = F.A.row(k).squaredNorm();
  const VectorXd proj = v - (gap / n2) * F.A.row(k).transpose();
  for (Index i = 0; i < F.A.rows(); ++i)
    if (i != k && F.A.row(i).dot(proj) - F.b(i) > 1e-12 * (1.0 + std::abs(F.b(i))))
      return std::numeric_limits<double>::infinity();
  return gap * gap / n2;
}

/// Exact squared distance between two convex polytopes from their features.
inline double feature_distance_sq(const Features& X, const Features& Y) {
  if (overlap(X, Y)) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [u, v] : X.edges)
    for (const auto& [p, q] : Y.edges)
      best = std::min(best, segment_distance_sq(X.vertices[u], X.vertices[v], Y.vertices[p], Y.vertices[q]));
  for (Index k = 0; k < Y.A.rows(); ++k)
    for (const auto& v : X.vertices) best = std::min(best, vertex_face_sq(Y, k, v));
  for (Index k = 0; k < X.A.rows(); ++k)
    for (const auto& v : Y.vertices) best = std::min(best, vertex_face_sq(X, k, v));
  return best;
}

/// 2D: minimum over boundary edge pairs, 0 on overlap.
inline OracleReport polygon_distance_2d(const PlacedHRep& Pi, const PlacedHRep& Pj) {
  if (Pi.dim() != 2 || Pj.dim() != 2) throw Error(ErrorCode::DimensionMismatch, "2D oracle");
  const auto X = Features::of(Pi), Y = Features::of(Pj);
  OracleReport rep;
  rep.method = Method::EdgePairs2D;
  rep.samples = static_cast<long>(X.edges.size() * Y.edges.size());
  rep.value = feature_distance_sq(X, Y);
  return rep;
}

/// 3D: vertex-face and edge-edge feature pairs, 0 on overlap.
inline OracleReport polytope_distance_3d(const PlacedHRep& Pi, const PlacedHRep& Pj) {
  if (Pi.dim() != 3 || Pj.dim() != 3) throw Error(ErrorCode::DimensionMismatch, "3D oracle");
  const auto X = Features::of(Pi), Y = Features::of(Pj);
  OracleReport rep;
  rep.method = Method::FeaturePairs3D;
  rep.samples = static_cast<long>(X.edges.size() * Y.edges.size() +
                                  X.vertices.size() * Y.A.rows() + Y.vertices.size() * X.A.rows());
  rep.value = feature_distance_sq(X, Y);
  return rep;
}

inline OracleReport polytope_distance(const PlacedHRep& Pi, const PlacedHRep& Pj) {
  return Pi.dim() == 2 ? polygon_distance_2d(Pi, Pj) : polytope_distance_3d(Pi, Pj);
}

/// Minimum pairwise squared distance over tau in {0, TM/n, ..., TM} while
/// both bodies follow the braking flow with frozen rotations.
inline OracleReport sampled_sweep_min(const RigidState& si, const RigidState& sj, const Polytope& pi,
                                      const Polytope& pj, double TM, int n) {
  if (n < 1 || TM <= 0.0) throw Error(ErrorCode::DimensionMismatch, "sweep sampling parameters");
  const auto X = Features::of(place(pi, si.pose()));
  const auto Y = Features::of(place(pj, sj.pose()));
  const Eigen::Vector3d vji = sj.v - si.v;
  OracleReport rep;
  rep.method = Method::SampledSweep;
  rep.samples = n + 1;
  rep.value = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= n; ++k) {
    const double tau = TM * k / n;
    const VectorXd shift = vji * (tau - tau * tau / (2.0 * TM));
    rep.value = std::min(rep.value, feature_distance_sq(X, Y.translated(shift)));
    if (rep.value == 0.0) break;
  }
  return rep;
}

/// Sample of a scalar trajectory together with a discrete signature (for
/// instance the active face sets) used to detect switches.
struct TrajectorySample {
  double h = 0.0;
  std::vector<Index> signature;
};

using TrajectorySampler = std::function<TrajectorySample(double)>;

/// Central difference (h(t+dt) - h(t-dt)) / (2 dt). Throws SwitchNearby if
/// the signature changes anywhere in [t - 5dt, t + 5dt].
inline OracleReport finite_diff_hdot(const TrajectorySampler& sampler, double t, double dt) {
  const auto ref = sampler(t).signature;
  TrajectorySample plus, minus;
  for (int k = -5; k <= 5; ++k) {
    const auto s = sampler(t + k * dt);
    if (s.signature != ref) throw Error(ErrorCode::SwitchNearby, "active set changes near t");
    if (k == 1) plus = s;
    if (k == -1) minus = s;
  }
  OracleReport rep;
  rep.method = Method::FiniteDiff;
  rep.samples = 11;
  rep.value = (plus.h - minus.h) / (2.0 * dt);
  return rep;
}

}  // namespace dualcbf::oracle
