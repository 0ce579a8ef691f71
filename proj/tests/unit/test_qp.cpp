#include <doctest.h>

#include <cmath>
#include <random>

#include "qp_oracle.hpp"
#include "srblab/error.hpp"
#include "srblab/qp.hpp"
#include "test_util.hpp"

using namespace srblab;
using srblab::testing::enumerate_active_sets;
using srblab::testing::random_small_qp;

namespace {

bool contains_edge(const FrictionBasis& b, const Vec3& e) {
  for (const auto& x : b.edges)
    if ((x - e).norm() < 1e-12) return true;
  return false;
}

void check_kkt(const QPProblem& p, const QPSolution& s, double tol = 1e-8) {
  const auto r = kkt_residuals(p, s);
  CHECK(r.stationarity < tol);
  CHECK(r.equality < tol);
  CHECK(r.min_bounded >= -1e-10);
  CHECK(r.min_bound_multiplier >= -1e-10);
  CHECK(r.complementarity < tol);
}

}  // namespace

TEST_CASE("friction basis edges") {
  const auto b = friction_basis(Vec3::UnitY(), 1.0, 4);
  REQUIRE(b.edges.size() == 4);
  CHECK(contains_edge(b, Vec3(1, 1, 0).normalized()));
  CHECK(contains_edge(b, Vec3(-1, 1, 0).normalized()));
  CHECK(contains_edge(b, Vec3(0, 1, 1).normalized()));
  CHECK(contains_edge(b, Vec3(0, 1, -1).normalized()));

  const auto b8 = friction_basis(Vec3::UnitY(), 0.8, 4);
  for (const auto& e : b8.edges) {
    CHECK(e.norm() == doctest::Approx(1.0));
    CHECK(e.dot(Vec3::UnitY()) == doctest::Approx(1.0 / std::sqrt(1.64)).epsilon(1e-12));
  }

  const Mat3 Rx = rot_x(0.3);
  const auto rotated = friction_basis(Rx * Vec3::UnitY(), 0.8, 4);
  for (int i = 0; i < 4; ++i) CHECK((rotated.edges[i] - Rx * b8.edges[i]).norm() < 1e-12);

  CHECK_THROWS_AS(friction_basis(Vec3::UnitY(), 0.0, 4), Error);
  CHECK_THROWS_AS(friction_basis(Vec3::UnitY(), -1.0, 4), Error);
}

TEST_CASE("friction basis is equivariant when the tangent hint rotates along") {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 100; ++i) {
    const Mat3 R = srblab::testing::random_rotation(rng);
    const auto base = friction_basis(Vec3::UnitY(), 0.6, 5, Vec3::UnitZ());
    const auto turned = friction_basis(R * Vec3::UnitY(), 0.6, 5, R * Vec3::UnitZ());
    for (int k = 0; k < 5; ++k) CHECK((turned.edges[k] - R * base.edges[k]).norm() < 1e-12);
  }
}

TEST_CASE("stacked basis is block diagonal") {
  const auto b = friction_basis(Vec3::UnitY(), 0.8, 4);
  const MatX B = stack_friction_bases({b, b, b});
  CHECK(B.rows() == 9);
  CHECK(B.cols() == 12);
  CHECK(B.block(3, 0, 3, 4).norm() == 0.0);
  CHECK(B.block(3, 4, 3, 4).isApprox(b.matrix()));
}

TEST_CASE("unconstrained and equality-constrained examples") {
  QPProblem p;
  p.H = MatX::Identity(3, 3);
  p.g = -Eigen::Vector3d(1, -2, 3);
  p.A_eq = MatX(0, 3);
  p.b_eq = VecX(0);
  p.nonneg_mask.assign(3, false);
  const auto s = solve_qp(p);
  CHECK((s.x - Eigen::Vector3d(1, -2, 3)).norm() < 1e-14);

  QPProblem q;
  q.H = 2.0 * MatX::Identity(2, 2);
  q.g = VecX::Zero(2);
  q.A_eq = MatX::Ones(1, 2);
  q.b_eq = VecX::Ones(1);
  q.nonneg_mask.assign(2, false);
  const auto t = solve_qp(q);
  CHECK(t.x[0] == doctest::Approx(0.5));
  CHECK(t.x[1] == doctest::Approx(0.5));
  check_kkt(q, t);
}

TEST_CASE("bound-active example") {
  // min (x0 + 1)^2 + (x1 - 2)^2, x0 >= 0  ->  x = (0, 2), multiplier 2
  QPProblem p;
  p.H = 2.0 * MatX::Identity(2, 2);
  p.g = Eigen::Vector2d(2.0, -4.0);
  p.A_eq = MatX(0, 2);
  p.b_eq = VecX(0);
  p.nonneg_mask = {true, false};
  const auto s = solve_qp(p);
  CHECK(s.x[0] == doctest::Approx(0.0));
  CHECK(s.x[1] == doctest::Approx(2.0));
  CHECK(s.bound_multipliers[0] == doctest::Approx(2.0));
  check_kkt(p, s);
}

TEST_CASE("solver matches exhaustive active-set enumeration") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 150; ++trial) {
    const int d = 2 + static_cast<int>(rng() % 7);
    const int masked = std::min(d, 1 + static_cast<int>(rng() % 4));
    const int neq = static_cast<int>(rng() % std::max(1, d - masked + 1)) % 3;
    const auto p = random_small_qp(rng, d, neq, masked);
    const auto s = solve_qp(p);
    const double oracle = enumerate_active_sets(p);
    CHECK(std::abs(s.objective - oracle) < 1e-8 * std::max(1.0, std::abs(oracle)));
    check_kkt(p, s);
  }
}

TEST_CASE("scaling the objective leaves the minimizer unchanged") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = random_small_qp(rng, 6, 2, 4);
    const auto s1 = solve_qp(p);
    const double c = srblab::testing::uniform(rng, 0.1, 50.0);
    p.H *= c;
    p.g *= c;
    const auto s2 = solve_qp(p);
    CHECK((s1.x - s2.x).norm() < 1e-8);
  }
}

TEST_CASE("solver is deterministic") {
  std::mt19937_64 rng(5);
  const auto p = random_small_qp(rng, 8, 2, 4);
  const auto a = solve_qp(p), b = solve_qp(p);
  CHECK(a.x == b.x);
}

TEST_CASE("infeasible problems are reported") {
  QPProblem p;
  p.H = MatX::Identity(2, 2);
  p.g = VecX::Zero(2);
  p.A_eq = MatX::Ones(1, 2);
  p.b_eq = -VecX::Ones(1);
  p.nonneg_mask = {true, true};
  try {
    solve_qp(p);
    FAIL("expected infeasible");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Infeasible);
  }

  QPProblem q;
  q.H = MatX::Identity(2, 2);
  q.g = VecX::Zero(2);
  q.A_eq = MatX(2, 2);
  q.A_eq << 1, 1, 2, 2;
  q.b_eq = Eigen::Vector2d(1, 3);
  q.nonneg_mask = {false, false};
  CHECK_THROWS_AS(solve_qp(q), Error);

  QPProblem r = q;
  r.H(0, 1) = 0.5;  // asymmetric
  CHECK_THROWS_AS(solve_qp(r), Error);
}

TEST_CASE("assemble_srb_qp without contacts is fully determined") {
  Mat6 M = Mat6::Zero();
  M.diagonal() << 7.5, 0.9, 7.8, 60, 60, 60;
  Vec6 b;
  b << 0.1, -0.2, 0.3, 0, 588, 0;
  Vec6 qdd_d;
  qdd_d << 1, 2, 3, 4, 5, 6;
  const auto p = assemble_srb_qp(M, b, MatX(0, 6), MatX(0, 0), MatX(0, 6), Vec3::Zero(), qdd_d, 0.001);
  const auto s = solve_qp(p);
  const Vec6 expected = M.inverse() * (-b);
  CHECK((s.x.head<6>() - expected).norm() < 1e-12);
  CHECK_THROWS_AS(assemble_srb_qp(M, b, MatX(0, 6), MatX(0, 0), MatX(0, 6), Vec3::Zero(), qdd_d, 0.0), Error);
  CHECK_THROWS_AS(assemble_srb_qp(M, b, MatX(3, 6), MatX(0, 4), MatX(0, 6), Vec3::Zero(), qdd_d, 0.001), Error);
}

TEST_CASE("assemble_srb_qp tracks an achievable acceleration") {
  // Two contact points below the COM; choose lambda0 >= 0 and define b so that
  // qdd_d is exactly achievable with lambda0.
  Mat6 M = Mat6::Zero();
  M.diagonal() << 7.5, 0.9, 7.8, 60, 60, 60;
  const Vec3 r1(0.1, -0.9, 0.1), r2(-0.1, -0.9, -0.1);
  MatX Jc(6, 6);
  Jc.block<3, 3>(0, 0) = -skew(r1);
  Jc.block<3, 3>(0, 3) = Mat3::Identity();
  Jc.block<3, 3>(3, 0) = -skew(r2);
  Jc.block<3, 3>(3, 3) = Mat3::Identity();
  const auto fb = friction_basis(Vec3::UnitY(), 0.8, 4);
  const MatX B = stack_friction_bases({fb, fb});
  VecX lambda0(8);
  lambda0 << 0.01, 0.02, 0.015, 0.01, 0.005, 0.02, 0.01, 0.01;
  Vec6 qdd_d;
  qdd_d << 0.1, -0.2, 0.05, 0.3, -0.1, 0.2;
  const Vec6 b = Jc.transpose() * B * lambda0 - M * qdd_d;
  const double w = 0.001;
  const auto p = assemble_srb_qp(M, b, Jc, B, MatX(0, 6), Vec3::Zero(), qdd_d, w);
  const auto s = solve_qp(p);
  check_kkt(p, s);
  // |qdd - qdd_d|^2 + w|lambda|^2 <= w |lambda0|^2, so the tracking error is bounded by sqrt(w)|lambda0|.
  const double q_value = (s.x.head<6>() - qdd_d).squaredNorm() + w * s.x.tail(8).squaredNorm();
  CHECK(q_value <= w * lambda0.squaredNorm() + 1e-15);
  CHECK((s.x.head<6>() - qdd_d).norm() <= std::sqrt(w) * lambda0.norm());
  CHECK(p.H(6, 6) == doctest::Approx(2.0 * 0.001));
}
