#include <gtest/gtest.h>

#include <random>

#include "dualcbf/geometry.hpp"
#include "support.hpp"

using namespace dualcbf;
using dualcbf::testing::vec;

namespace {

ErrorCode code_of(const MatrixXd& A, const VectorXd& b) {
  try {
    make_polytope(A, b);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::Config;
}

MatrixXd rows(std::initializer_list<std::initializer_list<double>> r) {
  MatrixXd m(static_cast<Index>(r.size()), static_cast<Index>(r.begin()->size()));
  Index i = 0;
  for (const auto& row : r) {
    Index j = 0;
    for (double x : row) m(i, j++) = x;
    ++i;
  }
  return m;
}

bool has_vertex(const std::vector<VectorXd>& vs, const VectorXd& z) {
  for (const auto& v : vs)
    if ((v - z).norm() < 1e-9) return true;
  return false;
}

}  // namespace

TEST(Polytope, UnitBoxIsValid) {
  auto p = make_polytope(rows({{1, 0}, {-1, 0}, {0, 1}, {0, -1}}), vec({1, 1, 1, 1}));
  EXPECT_EQ(p.rows(), 4);
  EXPECT_EQ(p.dim(), 2);
  EXPECT_NEAR(p.inner_radius(), 1.0, 1e-9);
  ASSERT_EQ(p.vertices().size(), 4u);
  for (double x : {-1.0, 1.0})
    for (double y : {-1.0, 1.0}) EXPECT_TRUE(has_vertex(p.vertices(), vec({x, y})));
}

TEST(Polytope, SlabIsUnbounded) {
  EXPECT_EQ(code_of(rows({{1, 0}, {-1, 0}}), vec({1, 1})), ErrorCode::Unbounded);
  EXPECT_EQ(code_of(rows({{1, 0}, {-1, 0}, {0, 1}}), vec({1, 1, 1})), ErrorCode::Unbounded);
}

TEST(Polytope, SquarePyramidApexIsDegenerate) {
  const double s = 1.0 / std::sqrt(2.0);
  auto A = rows({{s, 0, s}, {-s, 0, s}, {0, s, s}, {0, -s, s}, {0, 0, -1}});
  EXPECT_EQ(code_of(A, vec({s, s, s, s, 0})), ErrorCode::DegenerateVertex);
}

TEST(Polytope, FlatSetHasEmptyInterior) {
  auto A = rows({{1, 0}, {-1, 0}, {0, 1}, {0, -1}});
  EXPECT_EQ(code_of(A, vec({0, 0, 1, 1})), ErrorCode::EmptyInterior);
  EXPECT_EQ(code_of(A, vec({-1, -1, 1, 1})), ErrorCode::EmptyInterior);
}

TEST(Polytope, RedundantRowReportsIndex) {
  auto A = rows({{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}});
  try {
    make_polytope(A, vec({1, 1, 1, 1, 5}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RedundantRow);
    EXPECT_EQ(e.index(), 4);
  }
  // A supporting but non-cutting row is still redundant.
  try {
    make_polytope(A, vec({1, 1, 1, 1, 2}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RedundantRow);
  }
}

TEST(Polytope, RejectsBadShapes) {
  EXPECT_EQ(code_of(MatrixXd::Identity(4, 4), VectorXd::Ones(4)), ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of(rows({{1, 0}, {-1, 0}, {0, 1}}), vec({1, 1})), ErrorCode::DimensionMismatch);
}

TEST(Vertices, Triangle) {
  auto p = make_polytope(rows({{-1, 0}, {0, -1}, {1, 1}}), vec({0, 0, 1}));
  ASSERT_EQ(p.vertices().size(), 3u);
  EXPECT_TRUE(has_vertex(p.vertices(), vec({0, 0})));
  EXPECT_TRUE(has_vertex(p.vertices(), vec({1, 0})));
  EXPECT_TRUE(has_vertex(p.vertices(), vec({0, 1})));
}

TEST(Vertices, HullReproducesMembership2d) {
  // Sampled points are inside the H-rep iff they are inside the vertex hull
  // (checked via the ordered-polygon edge test).
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-2.5, 2.5);
  for (int t = 0; t < 50; ++t) {
    auto p = dualcbf::testing::random_polytope(rng, 2);
    auto vs = p.vertices();
    ASSERT_GE(vs.size(), 3u);
    VectorXd c = VectorXd::Zero(2);
    for (const auto& v : vs) c += v / static_cast<double>(vs.size());
    std::sort(vs.begin(), vs.end(), [&](const VectorXd& a, const VectorXd& b) {
      return std::atan2(a(1) - c(1), a(0) - c(0)) < std::atan2(b(1) - c(1), b(0) - c(0));
    });
    for (int s = 0; s < 200; ++s) {
      VectorXd z = vec({U(rng), U(rng)});
      bool in_hull = true;
      for (size_t k = 0; k < vs.size(); ++k) {
        const VectorXd& a = vs[k];
        const VectorXd& b = vs[(k + 1) % vs.size()];
        const double cross = (b(0) - a(0)) * (z(1) - a(1)) - (b(1) - a(1)) * (z(0) - a(0));
        if (cross < 0) in_hull = false;
      }
      const double margin = ((p.A() * z - p.b()).maxCoeff());
      if (std::abs(margin) < 1e-9) continue;
      EXPECT_EQ(in_hull, margin < 0);
    }
  }
}

TEST(Vertices, Random3dVerticesAreSimple) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    auto p = dualcbf::testing::random_polytope(rng, 3);
    EXPECT_GE(p.vertices().size(), 4u);
    for (const auto& v : p.vertices()) {
      EXPECT_TRUE(p.contains(v));
      int active = 0;
      for (Index k = 0; k < p.rows(); ++k)
        if (std::abs(p.A().row(k).dot(v) - p.b()(k)) <= 1e-7 * (1 + std::abs(p.b()(k)))) ++active;
      EXPECT_EQ(active, 3);
    }
  }
}

TEST(Place, IdentityTranslationRotation) {
  auto box = dualcbf::testing::box2(-1, 1, -1, 1);
  auto id = place(box, Pose::identity(2));
  EXPECT_EQ(id.Abar, box.A());
  EXPECT_EQ(id.bbar, box.b());

  auto moved = place(box, Pose::planar(2, 0, 0));
  EXPECT_LE((moved.bbar - vec({3, -1, 1, 1})).norm(), 1e-15);

  auto turned = place(box, Pose::planar(0, 0, M_PI / 2));
  EXPECT_LE((turned.Abar.row(0).transpose() - vec({0, 1})).norm(), 1e-15);
  EXPECT_NEAR(turned.bbar(0), 1.0, 1e-15);
}

TEST(Place, RejectsBadPose) {
  Pose bad{vec({0, 0, 0}), 2.0 * MatrixXd::Identity(3, 3)};
  EXPECT_THROW(bad.validate(), Error);
  auto box = dualcbf::testing::box2(-1, 1, -1, 1);
  EXPECT_THROW(place(box, Pose::identity(3)), Error);
}

TEST(Rates, PureTranslation) {
  auto box = dualcbf::testing::box2(-1, 1, -1, 1);
  auto r = hrep_rates(box, Pose::identity(2), vec({1, 0}), vec({0}));
  EXPECT_EQ(r.Adot.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE((r.bdot - vec({1, -1, 0, 0})).norm(), 1e-15);
  auto s = hrep_rates(box, Pose::planar(0.3, -2, 1.1), vec({0, 0}), vec({0}));
  EXPECT_EQ(s.Adot.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(s.bdot.cwiseAbs().maxCoeff(), 0.0);
}

namespace {

// Pose along a smooth path with constant world velocity and body rate.
Pose advance(const Pose& p0, const VectorXd& vel, const VectorXd& w, double t) {
  Pose out = p0;
  out.p = p0.p + t * vel;
  if (p0.dim() == 2) {
    out.R = rotation2d(w(0) * t) * p0.R;
  } else {
    Eigen::Vector3d wt = w * t;
    Eigen::Matrix3d E = Eigen::AngleAxisd(wt.norm(), wt.norm() > 0 ? wt.normalized() : Eigen::Vector3d::UnitX())
                            .toRotationMatrix();
    out.R = p0.R * E;
  }
  return out;
}

}  // namespace

TEST(Rates, MatchCentralDifferences) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> N(0.0, 1.0);
  for (int dim : {2, 3}) {
    for (int t = 0; t < 20; ++t) {
      auto poly = dualcbf::testing::random_polytope(rng, dim);
      auto pose = dualcbf::testing::random_pose(rng, dim, 3.0);
      VectorXd vel(dim), w(dim == 2 ? 1 : 3);
      for (Index i = 0; i < vel.size(); ++i) vel(i) = N(rng);
      for (Index i = 0; i < w.size(); ++i) w(i) = N(rng);
      const double dt = 1e-6;
      auto plus = place(poly, advance(pose, vel, w, dt));
      auto minus = place(poly, advance(pose, vel, w, -dt));
      auto rates = hrep_rates(poly, pose, vel, w);
      EXPECT_LE(((plus.Abar - minus.Abar) / (2 * dt) - rates.Adot).cwiseAbs().maxCoeff(), 1e-5);
      EXPECT_LE(((plus.bbar - minus.bbar) / (2 * dt) - rates.bdot).cwiseAbs().maxCoeff(), 1e-5);
    }
  }
}

TEST(Rates, SpatialMultiplierIdentity) {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto poly = dualcbf::testing::random_polytope(rng, 3);
  auto pose = dualcbf::testing::random_pose(rng, 3, 1.0);
  Eigen::Vector3d w(0.3, -0.7, 1.1);
  auto rates = hrep_rates(poly, pose, VectorXd::Zero(3), w);
  VectorXd lam(poly.rows());
  for (Index i = 0; i < lam.size(); ++i) lam(i) = U(rng);
  Eigen::Vector3d atl = poly.A().transpose() * lam;
  Eigen::RowVector3d lhs = lam.transpose() * rates.Adot;
  Eigen::RowVector3d rhs = w.transpose() * hat(atl) * pose.R.transpose();
  EXPECT_LE((lhs - rhs).norm(), 1e-12);
}

TEST(Rates, FirstOrderConvergence) {
  std::mt19937_64 rng(23);
  auto poly = dualcbf::testing::random_polytope(rng, 3);
  auto pose = dualcbf::testing::random_pose(rng, 3, 1.0);
  VectorXd vel = vec({0.4, -1.0, 0.2}), w = vec({0.5, 0.9, -0.3});
  auto rates = hrep_rates(poly, pose, vel, w);
  auto base = place(poly, pose);
  std::vector<double> lx, ly;
  for (double dt : {1e-3, 1e-4, 1e-5, 1e-6}) {
    auto fwd = place(poly, advance(pose, vel, w, dt));
    const double err = ((fwd.Abar - base.Abar) / dt - rates.Adot).cwiseAbs().maxCoeff() +
                       ((fwd.bbar - base.bbar) / dt - rates.bdot).cwiseAbs().maxCoeff();
    lx.push_back(std::log10(dt));
    ly.push_back(std::log10(err));
  }
  const double slope = (ly.front() - ly.back()) / (lx.front() - lx.back());
  EXPECT_GE(slope, 0.9);
}

TEST(Hat, CrossProduct) {
  EXPECT_LE((hat(Eigen::Vector3d::UnitX()) * Eigen::Vector3d::UnitY() - Eigen::Vector3d::UnitZ()).norm(), 0.0);
  EXPECT_EQ(hat(Eigen::Vector3d::Zero()), Eigen::Matrix3d::Zero());
  std::mt19937_64 rng(29);
  std::normal_distribution<double> N(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    Eigen::Vector3d v(N(rng), N(rng), N(rng)), w(N(rng), N(rng), N(rng));
    Eigen::Vector3d cross(v.y() * w.z() - v.z() * w.y(), v.z() * w.x() - v.x() * w.z(),
                          v.x() * w.y() - v.y() * w.x());
    EXPECT_LE((hat(v) * w - cross).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LE((hat(v).transpose() + hat(v)).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LE((hat(v) * w + hat(w) * v).cwiseAbs().maxCoeff(), 1e-15);
  }
}
