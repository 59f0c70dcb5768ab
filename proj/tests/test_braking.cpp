#include <gtest/gtest.h>

#include <random>

#include "dualcbf/braking.hpp"
#include "dualcbf/oracle.hpp"
#include "dualcbf/sim.hpp"
#include "support.hpp"

using namespace dualcbf;
using dualcbf::testing::random_polytope;
using dualcbf::testing::random_rotation;

namespace {

Polytope cube(double s) { return make_box(Eigen::Vector3d::Constant(-s), Eigen::Vector3d::Constant(s)); }

RigidState state(const Eigen::Vector3d& r, const Eigen::Vector3d& v,
                 const Eigen::Matrix3d& R = Eigen::Matrix3d::Identity()) {
  RigidState s;
  s.r = r;
  s.v = v;
  s.R = R;
  return s;
}

/// Triangular prism: 3 side faces plus top and bottom.
Polytope prism(double s) {
  MatrixXd A(5, 3);
  for (int k = 0; k < 3; ++k) {
    const double a = 2.0 * M_PI * k / 3.0;
    A.row(k) << std::cos(a), std::sin(a), 0.0;
  }
  A.row(3) << 0, 0, 1;
  A.row(4) << 0, 0, -1;
  return make_polytope(A, VectorXd::Constant(5, s));
}

struct RandomPair {
  Polytope pi, pj;
  RigidState si, sj;
};

RandomPair random_pair(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  RandomPair p{random_polytope(rng, 3, 0.4), random_polytope(rng, 3, 0.4), {}, {}};
  p.si = state(Eigen::Vector3d(U(rng), U(rng), U(rng)) * 2.0, Eigen::Vector3d(U(rng), U(rng), U(rng)) * 1.5,
               random_rotation(rng));
  p.sj = state(Eigen::Vector3d(U(rng), U(rng), U(rng)) * 2.0, Eigen::Vector3d(U(rng), U(rng), U(rng)) * 1.5,
               random_rotation(rng));
  return p;
}

}  // namespace

TEST(ComputeTm, Examples) {
  EXPECT_DOUBLE_EQ(compute_tm({{1.0, 0.5, 4.0}}), 4.0);
  EXPECT_DOUBLE_EQ(compute_tm({{1.0, 0.5, 4.0}, {2.0, 0.5, 2.0}}), 4.0);
  EXPECT_DOUBLE_EQ(compute_tm({{2.0, 0.5, 3.0}, {2.0, 0.5, 3.0}}), 1.5);
  try {
    compute_tm({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyFleet);
  }
}

TEST(BrakingInput, FormulaAndRest) {
  const auto b = braking_input(state({0, 0, 0}, {2, 0, 0}), 4.0);
  EXPECT_DOUBLE_EQ(b.a.x(), -0.5);
  EXPECT_EQ(b.a.tail<2>().norm(), 0.0);
  EXPECT_EQ(b.w.norm(), 0.0);
  EXPECT_EQ(braking_input(state({1, 2, 3}, {0, 0, 0}), 4.0).a.norm(), 0.0);
}

TEST(BrakingInput, StopsWithinHorizon) {
  RigidState s = state({0, 0, 0}, {2.0, -1.0, 0.5});
  const double TM = 4.0, dt = 0.02;
  const auto b = braking_input(s, TM);
  for (int k = 0; k < 200; ++k) s = rigid6_step(s, b.a, b.w, dt);
  EXPECT_LE(s.v.norm(), 1e-9);
}

TEST(BrakingInput, RelativeMotionIsStraight) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_pair(rng);
    const double TM = 4.0, dt = 0.02;
    const Eigen::Vector3d r0 = p.sj.r - p.si.r, v0 = p.sj.v - p.si.v;
    const auto bi = braking_input(p.si, TM), bj = braking_input(p.sj, TM);
    for (int k = 0; k < 200; ++k) {
      p.si = rigid6_step(p.si, bi.a, bi.w, dt);
      p.sj = rigid6_step(p.sj, bj.a, bj.w, dt);
      const Eigen::Vector3d d = (p.sj.r - p.si.r) - r0;
      EXPECT_LE(d.cross(v0).norm(), 1e-9 * (1.0 + d.norm() * v0.norm()));
    }
    // Total displacement is v0 TM / 2 up to the Euler error.
    EXPECT_NEAR(((p.sj.r - p.si.r) - r0 - v0 * TM / 2).norm(), 0.0, v0.norm() * dt);
  }
}

TEST(HullDistance, StaticSweepEqualsPairDistance) {
  const auto pi = cube(0.5), pj = cube(0.5);
  const auto si = state({0, 0, 0}, {0.3, 0, 0}), sj = state({2.5, 0.2, 0}, {0.3, 0, 0});
  const double h = hull_distance_primal(si, sj, pi, pj, 4.0).h;
  const double ref = min_distance_primal(place(pi, si.pose()), place(pj, sj.pose())).h;
  EXPECT_NEAR(h, ref, 1e-9);
  EXPECT_NEAR(h, 2.25, 1e-9);
  const auto d = hull_distance_dual(si, sj, pi, pj, 4.0);
  EXPECT_NEAR(d.h, min_distance_dual(place(pi, si.pose()), place(pj, sj.pose())).h, 1e-8);
}

TEST(HullDistance, RecedingKeepsCurrentDistance) {
  const auto pi = cube(0.5), pj = cube(0.5);
  const auto si = state({0, 0, 0}, {0, 0, 0}), sj = state({2.0, 0, 0}, {1.5, 0, 0});
  const double h = hull_distance_primal(si, sj, pi, pj, 4.0).h;
  EXPECT_NEAR(h, oracle::sampled_sweep_min(si, sj, pi, pj, 4.0, 1000).value, 1e-3);
  EXPECT_NEAR(h, 1.0, 1e-9);
}

TEST(HullDistance, SweepThroughGivesZero) {
  const auto pi = cube(0.5), pj = cube(0.5);
  const auto si = state({0, 0, 0}, {0, 0, 0}), sj = state({3.0, 0, 0}, {-2.0, 0, 0});
  EXPECT_EQ(oracle::sampled_sweep_min(si, sj, pi, pj, 4.0, 1000).value, 0.0);
  EXPECT_NEAR(hull_distance_primal(si, sj, pi, pj, 4.0).h, 0.0, 1e-12);
  const auto d = hull_distance_dual(si, sj, pi, pj, 4.0);
  EXPECT_EQ(d.h, 0.0);
}

TEST(HullDistance, ApproachingSweepStopsShort) {
  // Closing at 1 m/s with T_M = 2 covers 1 m of the 2 m gap.
  const auto pi = cube(0.5), pj = cube(0.5);
  const auto si = state({0, 0, 0}, {0, 0, 0}), sj = state({3.0, 0, 0}, {-1.0, 0, 0});
  EXPECT_NEAR(hull_distance_primal(si, sj, pi, pj, 2.0).h, 1.0, 1e-9);
  EXPECT_NEAR(oracle::sampled_sweep_min(si, sj, pi, pj, 2.0, 1000).value, 1.0, 1e-9);
}

TEST(HullDistance, RandomAgreementWithSampling) {
  std::mt19937_64 rng(11);
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const auto p = random_pair(rng);
    const double h = hull_distance_primal(p.si, p.sj, p.pi, p.pj, 4.0).h;
    const double s = oracle::sampled_sweep_min(p.si, p.sj, p.pi, p.pj, 4.0, 1000).value;
    EXPECT_NEAR(h, s, 1e-3) << "trial " << trial;
    EXPECT_LE(h, s + 1e-8);
    checked += h > 0.0;
  }
  EXPECT_GT(checked, 10);
}

TEST(HullDistance, ReducedAndFullDualsMatchPrimal) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_pair(rng);
    const auto f = hull_frame(p.si, p.sj, p.pi, p.pj, 4.0);
    const auto d = hull_distance_dual(f);
    EXPECT_LE(std::abs(d.h - d.h_primal), 1e-6 * (1.0 + d.h));
    EXPECT_GE(d.lam1.minCoeff(), -1e-9);
    EXPECT_GE(d.lam2.minCoeff(), -1e-9);
    EXPECT_GE(std::min(d.lam4, d.lam5), -1e-9);
    EXPECT_LE((f.Ai.transpose() * d.lam1 + f.Aj.transpose() * d.lam2).norm(), 1e-7);
    EXPECT_LE(std::abs(d.lam2.dot(f.Aj * f.sweep) + d.lam4 - d.lam5), 1e-7);
    const auto full = hull_full_dual(f);
    EXPECT_LE(std::abs(full.h - d.h_primal), 1e-6 * (1.0 + d.h));
  }
}

TEST(HullDistance, NeverExceedsCurrentDistance) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 500; ++trial) {
    const auto p = random_pair(rng);
    const double h = hull_distance_primal(p.si, p.sj, p.pi, p.pj, 4.0).h;
    const double rho = instantaneous_rho(p.si, p.sj, p.pi, p.pj);
    EXPECT_LE(h, rho + 1e-8) << "trial " << trial;
  }
}

TEST(HullDistance, EqualsCurrentDistanceAtRest) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = random_pair(rng);
    p.sj.v = p.si.v;
    const double h = hull_distance_dual(p.si, p.sj, p.pi, p.pj, 4.0).h;
    EXPECT_NEAR(h, instantaneous_rho(p.si, p.sj, p.pi, p.pj), 1e-9);
  }
}

namespace {

struct Fleet {
  std::vector<RigidState> states;
  std::vector<Polytope> polys;
  std::vector<BrakingLimits> limits;
};

Fleet prism_fleet(int N, double spacing) {
  Fleet f;
  for (int k = 0; k < N; ++k) {
    const double a = 2.0 * M_PI * k / N;
    f.states.push_back(state(spacing * Eigen::Vector3d(std::cos(a), std::sin(a), 0.0), Eigen::Vector3d::Zero()));
    f.polys.push_back(prism(0.3));
    f.limits.push_back({1.0, 0.2 * M_PI, 4.0});
  }
  return f;
}

}  // namespace

TEST(Centralized, SizesFollowStructure) {
  CentralizedConfig cfg;
  for (int N : {3, 5, 10}) {
    auto f = prism_fleet(N, 1.0 + N);
    const auto pairs = centralized_pairs(f.states, f.polys, compute_tm(f.limits));
    const auto size = centralized_size(f.states, pairs, f.limits, cfg);
    const long P = N * (N - 1) / 2;
    // Inputs, then per pair: two 5-face multiplier rates and the two scalar
    // rates of the sweep-parameter multipliers.
    EXPECT_EQ(size.variables, 6 * N + P * (5 + 5 + 2));
    EXPECT_EQ(size.max_constraints, P * (2 * 5 + 3) + 7 * N + 4 * P);
    EXPECT_LE(size.constraints, size.max_constraints);
  }
}

TEST(Centralized, ZeroInputFeasibleAtRest) {
  auto f = prism_fleet(3, 3.0);
  CentralizedConfig cfg;
  const auto dec = solve_centralized(f.states, f.polys, VectorXd::Zero(18), f.limits, cfg);
  ASSERT_EQ(dec.decision.status, FilterStatus::Optimal);
  EXPECT_LE(dec.decision.u.norm(), 1e-9);
}

TEST(Centralized, RejectsStatesInsideMargin) {
  auto f = prism_fleet(2, 0.3);
  CentralizedConfig cfg;
  const auto dec = solve_centralized(f.states, f.polys, VectorXd::Zero(12), f.limits, cfg);
  EXPECT_EQ(dec.decision.status, FilterStatus::SafetyViolated);
  EXPECT_EQ(dec.decision.u.norm(), 0.0);
}

TEST(Centralized, PassThroughWhenFarApart) {
  auto f = prism_fleet(3, 30.0);
  CentralizedConfig cfg;
  VectorXd u_nom = VectorXd::Zero(18);
  u_nom.segment<3>(0) << 0.2, -0.1, 0.05;
  u_nom.segment<3>(9) << 0.0, 0.0, 0.1;
  const auto dec = solve_centralized(f.states, f.polys, u_nom, f.limits, cfg);
  ASSERT_EQ(dec.decision.status, FilterStatus::Optimal);
  EXPECT_LE((dec.decision.u - u_nom).norm(), 1e-7);
}

TEST(Centralized, InputAndVelocityRowsHold) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  auto f = prism_fleet(3, 4.0);
  CentralizedConfig cfg;
  for (int trial = 0; trial < 30; ++trial) {
    for (auto& s : f.states) {
      s.v = Eigen::Vector3d(U(rng), U(rng), U(rng));
      s.R = random_rotation(rng);
    }
    VectorXd u_nom(18);
    for (Index k = 0; k < 18; ++k) u_nom(k) = 3.0 * U(rng);
    const auto dec = solve_centralized(f.states, f.polys, u_nom, f.limits, cfg);
    if (dec.decision.status != FilterStatus::Optimal) continue;
    for (int r = 0; r < 3; ++r) {
      const auto& L = f.limits[static_cast<size_t>(r)];
      EXPECT_LE(dec.decision.u.segment<3>(6 * r).cwiseAbs().maxCoeff(), L.a_max + 1e-12);
      EXPECT_LE(dec.decision.u.segment<3>(6 * r + 3).cwiseAbs().maxCoeff(), L.w_max + 1e-12);
      const auto& s = f.states[static_cast<size_t>(r)];
      EXPECT_LE(s.v.dot(dec.decision.u.segment<3>(6 * r)),
                cfg.alpha3 * (L.v_max * L.v_max - s.v.squaredNorm()) + 1e-7);
    }
    for (const auto& d : dec.decision.pairs) EXPECT_GE(d.margin, -1e-6);
  }
}

TEST(Centralized, BrakingCandidateSatisfiesDerivativeRows) {
  // With u = braking input and zero multiplier rates the rotation terms vanish
  // and the sweep row fixes lamdot4 - lamdot5 = c / T_M, c = lam2 Aj sweep.
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_pair(rng);
    const double TM = 4.0;
    const auto d = hull_distance_dual(p.si, p.sj, p.pi, p.pj, TM);
    const auto& f = d.frame;
    const Eigen::Vector3d a_ji = (braking_input(p.sj, TM).a - braking_input(p.si, TM).a);
    const double c = d.lam2.dot(f.Aj * f.sweep);
    EXPECT_NEAR(d.lam2.dot(f.Aj * a_ji) * TM / 2.0, -c / TM, 1e-9 * (1.0 + std::abs(c)));
  }
}

TEST(Centralized, DerivativeMatchesFiniteDifference) {
  // Generic orientations: with parallel edges in contact the multiplier
  // rates can only bound the rate from below.
  const auto pi = cube(0.4), pj = prism(0.4);
  RigidState si = state({0, 0, 0}, {0.2, 0, 0});
  RigidState sj = state({3.0, 0.5, 0.2}, {-0.5, 0.1, 0});
  si.R = Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  sj.R = Eigen::AngleAxisd(0.3, Eigen::Vector3d(-2, 1, 4).normalized()).toRotationMatrix();
  const std::vector<BrakingLimits> limits{{1.0, 0.2 * M_PI, 4.0}, {1.0, 0.2 * M_PI, 4.0}};
  CentralizedConfig cfg;
  VectorXd u(12);
  u << 0.1, 0.0, 0.0, 0.0, 0.0, 0.1, -0.2, 0.1, 0.0, 0.05, 0.0, 0.2;
  const double TM = compute_tm(limits);
  auto advance = [&](double tau) {
    std::vector<RigidState> s{si, sj};
    // Exact flow for constant inputs.
    for (int r = 0; r < 2; ++r) {
      auto& x = s[static_cast<size_t>(r)];
      const Eigen::Vector3d a = u.segment<3>(6 * r), w = u.segment<3>(6 * r + 3);
      x.r += tau * x.v + 0.5 * tau * tau * a;
      x.v += tau * a;
      x.R = x.R * Eigen::AngleAxisd(tau * w.norm(), w.normalized()).toRotationMatrix();
    }
    return s;
  };
  const auto s0 = advance(0.0);
  const double eps = 1e-5;
  const double hp = hull_distance_primal(advance(eps)[0], advance(eps)[1], pi, pj, TM).h;
  const double hm = hull_distance_primal(advance(-eps)[0], advance(-eps)[1], pi, pj, TM).h;
  const double fd = (hp - hm) / (2 * eps);
  auto ca = detail::assemble_centralized(s0, centralized_pairs(s0, {pi, pj}, TM), u, limits, cfg);
  // Maximize Ldot over the multiplier rates with u fixed.
  auto& qp = ca.qp;
  const Index n = ca.size.variables;
  QpProblem lp = QpProblem::zeros(n);
  lp.q = -ca.ldot_coef[0];
  lp.Aeq = qp.Aeq;
  lp.beq = qp.beq;
  lp.lb = qp.lb;
  lp.ub = qp.ub;
  lp.lb.head(12) = u;
  lp.ub.head(12) = u;
  const auto sol = solve_lp(lp);
  ASSERT_TRUE(sol.optimal());
  const double ldot = ca.ldot_coef[0].dot(sol.x) + ca.ldot_const[0];
  EXPECT_GT(std::abs(fd), 0.1);
  EXPECT_NEAR(ldot, fd, 1e-6 * (1.0 + std::abs(fd)));
}

TEST(Supervisor, ForcedBrakingStopsFleet) {
  auto f = prism_fleet(3, 3.0);
  f.states[0].v << 1.0, 0.5, 0.0;
  f.states[1].v << -0.5, 0.0, 0.2;
  f.states[2].v << 0.0, -1.0, 0.0;
  const double TM = compute_tm(f.limits), dt = 0.02;
  Supervisor sup(TM, dt);
  const VectorXd dummy = VectorXd::Constant(18, 0.7);
  VectorXd u = sup.step(f.states, false, dummy);
  EXPECT_EQ(sup.braking_events(), 1);
  for (int k = 0; k < 200; ++k) {
    for (size_t r = 0; r < 3; ++r)
      f.states[r] = rigid6_step(f.states[r], u.segment<3>(6 * static_cast<Index>(r)),
                                u.segment<3>(6 * static_cast<Index>(r) + 3), dt);
    if (k < 199) u = sup.step(f.states, true, dummy);
  }
  EXPECT_FALSE(sup.braking_active_for_next());
  for (const auto& s : f.states) EXPECT_LE(s.v.norm(), 1e-6);
  CentralizedConfig cfg;
  const auto dec = solve_centralized(f.states, f.polys, VectorXd::Zero(18), f.limits, cfg);
  ASSERT_EQ(dec.decision.status, FilterStatus::Optimal);
  EXPECT_LE(dec.decision.u.norm(), 1e-9);
  // Control returns to the QP.
  EXPECT_EQ(sup.step(f.states, true, dummy), dummy);
}
