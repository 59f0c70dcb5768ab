#pragma once

#include <random>

#include "dualcbf/geometry.hpp"

namespace dualcbf::testing {

/// Polytope circumscribing a sphere of radius `scale` with random tangent
/// faces; retried until it passes validation.
inline Polytope random_polytope(std::mt19937_64& rng, int dim, double scale = 1.0) {
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_int_distribution<int> rows2(3, 8), rows3(4, 10);
  std::uniform_real_distribution<double> U(0.0, 2.0 * M_PI);
  for (;;) {
    const int r = dim == 2 ? rows2(rng) : rows3(rng);
    MatrixXd A(r, dim);
    if (dim == 2) {
      std::vector<double> ang(r);
      for (auto& a : ang) a = U(rng);
      std::sort(ang.begin(), ang.end());
      for (int k = 0; k < r; ++k) A.row(k) << std::cos(ang[k]), std::sin(ang[k]);
    } else {
      for (int k = 0; k < r; ++k) {
        Eigen::Vector3d n(N(rng), N(rng), N(rng));
        A.row(k) = n.normalized().transpose();
      }
    }
    VectorXd b = VectorXd::Constant(r, scale);
    try {
      return make_polytope(A, b);
    } catch (const Error&) {
    }
  }
}

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::Quaterniond q(N(rng), N(rng), N(rng), N(rng));
  return q.normalized().toRotationMatrix();
}

inline Pose random_pose(std::mt19937_64& rng, int dim, double spread) {
  std::uniform_real_distribution<double> U(-spread, spread);
  std::uniform_real_distribution<double> A(-M_PI, M_PI);
  if (dim == 2) return Pose::planar(U(rng), U(rng), A(rng));
  return Pose::spatial(Eigen::Vector3d(U(rng), U(rng), U(rng)), random_rotation(rng));
}

inline VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

inline Polytope box2(double x0, double x1, double y0, double y1) {
  return make_box(vec({x0, y0}), vec({x1, y1}));
}

}  // namespace dualcbf::testing
