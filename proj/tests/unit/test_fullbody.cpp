#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "srblab/error.hpp"
#include "srblab/fullbody.hpp"
#include "test_util.hpp"

using namespace srblab;
using srblab::testing::random_rotation;
using srblab::testing::random_vec3;
using srblab::testing::uniform;

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

Link make_link(const std::string& name, int parent, JointType joint, std::vector<Vec3> axes, const Vec3& offset,
               double mass, const Vec3& com, const Mat3& inertia) {
  Link l;
  l.name = name;
  l.parent = parent;
  l.joint = joint;
  l.axes = std::move(axes);
  l.offset = offset;
  l.mass = mass;
  l.com = com;
  l.inertia = inertia;
  return l;
}

FullBodyPose random_pose(const Skeleton& sk, std::mt19937_64& rng) {
  FullBodyPose x;
  x.base = RigidTransform::unchecked(random_rotation(rng), random_vec3(rng));
  x.q = VecX(sk.num_joint_dofs());
  for (int i = 0; i < x.q.size(); ++i) x.q[i] = uniform(rng, -0.8, 0.8);
  return x;
}

VecX random_velocity(const Skeleton& sk, std::mt19937_64& rng) {
  VecX v(sk.num_dofs());
  for (int i = 0; i < v.size(); ++i) v[i] = uniform(rng, -1.0, 1.0);
  return v;
}

// Momentum of each link from finite-differenced link motion, summed about the COM.
Vec6 momentum_by_links(const Skeleton& sk, const FullBodyPose& x, const VecX& xdot) {
  const double h = 1e-6;
  const Kinematics k0 = fk(sk, x);
  const Kinematics kp = fk(sk, retract(x, h * xdot));
  const Kinematics km = fk(sk, retract(x, -h * xdot));
  Vec6 out = Vec6::Zero();
  for (int i = 0; i < sk.num_links(); ++i) {
    const Link& l = sk.links()[i];
    const Vec3 v = (kp.link_com[i] - km.link_com[i]) / (2.0 * h);
    const Vec3 w = log_so3(kp.frames[i].R() * km.frames[i].R().transpose()) / (2.0 * h);
    const Mat3& R = k0.frames[i].R();
    out.head<3>() += R * l.inertia * R.transpose() * w + l.mass * (k0.link_com[i] - k0.com).cross(v);
    out.tail<3>() += l.mass * v;
  }
  return out;
}

// Planar three-joint leg on a floating pelvis, heel and toe on the foot.
Skeleton planar_leg() {
  const Mat3 I = 0.01 * Mat3::Identity();
  std::vector<Link> links;
  links.push_back(make_link("pelvis", -1, JointType::Free, {}, Vec3::Zero(), 10.0, Vec3::Zero(), I));
  links.push_back(make_link("thigh", 0, JointType::Revolute, {Vec3::UnitX()}, Vec3::Zero(), 5.0, Vec3(0, -0.25, 0), I));
  links.push_back(
      make_link("shank", 1, JointType::Revolute, {Vec3::UnitX()}, Vec3(0, -0.5, 0), 3.0, Vec3(0, -0.25, 0), I));
  links.push_back(
      make_link("foot", 2, JointType::Revolute, {Vec3::UnitX()}, Vec3(0, -0.5, 0), 1.0, Vec3(0, -0.05, 0.05), I));
  std::vector<ContactAttachment> contacts{{3, 0, 0, Vec3(0, -0.1, -0.05)}, {3, 0, 1, Vec3(0, -0.1, 0.15)}};
  return Skeleton(std::move(links), std::move(contacts));
}

SRBCycle cycle_from_reference(const ReferenceSRBMotion& ref) {
  SRBCycle c;
  for (int i = 0; i <= ref.size(); ++i) {
    const RefSample r = i < ref.size() ? sample_reference(ref, kTwoPi * i / ref.size())
                                       : sample_reference(ref, 0.0, ref.cycle_offset);
    SRBFrame f;
    f.psi = kTwoPi * i / ref.size();
    f.T = r.T;
    f.velocity << r.T.R() * r.qdot.angular, r.T.R() * r.qdot.linear;
    for (int j = 0; j < kNumFeet; ++j) {
      f.feet[j] = foot_frame(r.foot_yaw[j], r.foot_position[j]);
      f.contact[j] = r.contact[j];
    }
    c.push_back(f);
  }
  return c;
}

MMIKTargets random_targets(const Skeleton& sk, const FullBodyPose& x, std::mt19937_64& rng) {
  MMIKTargets t;
  t.x_bar = random_pose(sk, rng);
  t.x_bar.base = RigidTransform::unchecked(exp_so3(random_vec3(rng, 0.3)) * x.base.R(), x.base.p() + random_vec3(rng, 0.1));
  t.xdot_bar = random_velocity(sk, rng);
  t.velocity = random_velocity(sk, rng).head<6>();
  t.A = centroidal_map(sk, t.x_bar);
  FullBodyPose prev = x;
  VecX dz = VecX::Zero(sk.num_dofs());
  for (int i = 0; i < dz.size(); ++i) dz[i] = uniform(rng, -0.02, 0.02);
  t.x_prev = retract(prev, dz);
  for (std::size_t a = 0; a < sk.contacts().size(); ++a) t.contacts.push_back(random_vec3(rng));
  return t;
}

}  // namespace

TEST_CASE("default skeleton") {
  const Skeleton sk = default_skeleton();
  CHECK(sk.num_dofs() == 29);
  CHECK(sk.num_joint_dofs() == 23);
  CHECK(sk.total_mass() == doctest::Approx(60.0).epsilon(1e-12));
  for (int i = 1; i < sk.num_links(); ++i) CHECK(sk.links()[i].parent < i);
  CHECK_NOTHROW(sk.require_feet());
  // Standing pose: feet below the pelvis, soles level.
  const Kinematics k = fk(sk, FullBodyPose::zero(sk));
  for (int f = 0; f < kNumFeet; ++f) {
    const Vec3 heel = k.contacts[sk.contact_index(f, 0)];
    const Vec3 toe = k.contacts[sk.contact_index(f, 1)];
    CHECK(heel.y() == doctest::Approx(toe.y()));
    CHECK(heel.y() < -0.9);
    CHECK(toe.z() > heel.z());
  }
  CHECK(k.contacts[sk.contact_index(kLeft, 0)].x() > 0.0);
}

TEST_CASE("forward kinematics") {
  const Skeleton sk = default_skeleton();
  std::mt19937_64 rng(3);
  const FullBodyPose x = random_pose(sk, rng);
  const Kinematics k0 = fk(sk, x);

  const Vec3 d(0.3, -1.2, 2.5);
  FullBodyPose moved = x;
  moved.base = RigidTransform::translation(d) * x.base;
  const Kinematics k1 = fk(sk, moved);
  for (std::size_t a = 0; a < k0.contacts.size(); ++a) CHECK((k1.contacts[a] - k0.contacts[a] - d).norm() < 1e-12);
  for (int i = 0; i < sk.num_links(); ++i) CHECK((k1.link_com[i] - k0.link_com[i] - d).norm() < 1e-12);

  // Single revolute joint: the child point rotates about the joint axis (Rodrigues).
  const Mat3 I = 0.01 * Mat3::Identity();
  const Vec3 axis = Vec3(1.0, 2.0, -0.5).normalized();
  const Vec3 origin(0.1, 0.2, 0.3);
  const Vec3 point(0.4, -0.3, 0.2);
  Skeleton one({make_link("root", -1, JointType::Free, {}, Vec3::Zero(), 1.0, Vec3::Zero(), I),
                make_link("arm", 0, JointType::Revolute, {axis}, origin, 1.0, Vec3::Zero(), I)},
               {{1, 0, 0, point}});
  for (double theta : {0.0, 0.4, -1.3, 2.9}) {
    FullBodyPose p = FullBodyPose::zero(one);
    p.q[0] = theta;
    const Vec3 v = point;
    const Vec3 expect = origin + std::cos(theta) * v + std::sin(theta) * axis.cross(v) +
                        (1.0 - std::cos(theta)) * axis.dot(v) * axis;
    CHECK((fk(one, p).contacts[0] - expect).norm() < 1e-12);
  }
}

TEST_CASE("composite rigid-body inertia") {
  const Mat3 I1 = Vec3(0.1, 0.2, 0.3).asDiagonal();
  Skeleton single({make_link("root", -1, JointType::Free, {}, Vec3::Zero(), 4.0, Vec3(0.1, 0.0, 0.2), I1)}, {});
  std::mt19937_64 rng(5);
  FullBodyPose x = FullBodyPose::zero(single);
  x.base = RigidTransform::unchecked(random_rotation(rng), random_vec3(rng));
  const Mat6 If = crb_inertia(single, x);
  Mat6 expect = Mat6::Zero();
  expect.topLeftCorner<3, 3>() = x.base.R() * I1 * x.base.R().transpose();
  expect.bottomRightCorner<3, 3>() = 4.0 * Mat3::Identity();
  CHECK((If - expect).cwiseAbs().maxCoeff() < 1e-12);

  // Two point masses at +-d about the COM: parallel-axis theorem.
  const Mat3 tiny = 1e-12 * Mat3::Identity();
  const Vec3 d(0.3, 0.0, 0.0);
  Skeleton pair({make_link("root", -1, JointType::Free, {}, Vec3::Zero(), 2.0, d, tiny),
                 make_link("other", 0, JointType::Fixed, {}, Vec3::Zero(), 2.0, -d, tiny)},
                {});
  const Mat6 Ip = crb_inertia(pair, FullBodyPose::zero(pair));
  const double m_r2 = 2.0 * 2.0 * d.squaredNorm();
  CHECK(Ip(0, 0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(Ip(1, 1) == doctest::Approx(m_r2));
  CHECK(Ip(2, 2) == doctest::Approx(m_r2));
  CHECK((Ip.topLeftCorner<3, 3>() - Ip.topLeftCorner<3, 3>().diagonal().asDiagonal().toDenseMatrix())
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  const Skeleton sk = default_skeleton();
  for (int trial = 0; trial < 20; ++trial) {
    const Mat6 M = crb_inertia(sk, random_pose(sk, rng));
    CHECK((M - M.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(Eigen::SelfAdjointEigenSolver<Mat6>(M).eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("momentum jacobian") {
  const Skeleton sk = default_skeleton();
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const FullBodyPose x = random_pose(sk, rng);
    const Kinematics kin = fk(sk, x);
    const MatX Jm = momentum_jacobian(sk, kin);
    const Mat6 If = crb_inertia(sk, kin);

    // Pure base translation.
    VecX v = VecX::Zero(sk.num_dofs());
    v.segment<3>(3) = Vec3(0.5, -0.2, 1.0);
    const Vec6 h = Jm * v;
    CHECK(h.head<3>().norm() < 1e-12);
    CHECK((h.tail<3>() - 60.0 * v.segment<3>(3)).norm() < 1e-10);

    // Per-link momentum oracle.
    const VecX xdot = random_velocity(sk, rng);
    const Vec6 oracle = momentum_by_links(sk, x, xdot);
    CHECK((Jm * xdot - oracle).norm() < 1e-6 * (1.0 + oracle.norm()));

    // Frozen joints: the whole assembly moves rigidly.
    VecX rigid = VecX::Zero(sk.num_dofs());
    rigid.head<6>() = xdot.head<6>();
    const Vec3 w = rigid.head<3>();
    const Vec3 vc = rigid.segment<3>(3) + w.cross(kin.com - x.base.p());
    Vec6 twist;
    twist << w, vc;
    CHECK((Jm * rigid - If * twist).norm() < 1e-10);

    // Base columns are I_f mapped from the base origin to the COM.
    Mat6 X = Mat6::Identity();
    X.bottomLeftCorner<3, 3>() = -skew(kin.com - x.base.p());
    CHECK((Jm.leftCols<6>() - If * X).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("pose tangent difference and retraction") {
  const Skeleton sk = default_skeleton();
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const FullBodyPose a = random_pose(sk, rng);
    FullBodyPose b = a;
    b.base = RigidTransform::unchecked(exp_so3(random_vec3(rng, 0.5)) * a.base.R(), random_vec3(rng));
    b.q = a.q + VecX::Constant(a.q.size(), 0.1);
    const FullBodyPose back = retract(b, pose_difference(a, b));
    CHECK((back.base.R() - a.base.R()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.base.p() - a.base.p()).norm() < 1e-12);
    CHECK((back.q - a.q).norm() < 1e-12);
  }
}

TEST_CASE("baseline alignment") {
  for (const char* gait : {"walk", "in_place_step"}) {
    CAPTURE(gait);
    const auto ref = synth_reference(default_synth_params(parse_gait_kind(gait)));
    const SRBCycle cycle = cycle_from_reference(ref);
    const Alignment same = align_cycle(cycle, ref);
    CHECK(std::abs(same.yaw) < 1e-12);
    CHECK(same.translation.norm() < 1e-12);

    const RigidTransform G = RigidTransform::unchecked(rot_y(M_PI / 6.0), Vec3(2.0, 0.0, -3.0));
    SRBCycle moved = cycle;
    for (auto& f : moved) {
      f.T = G * f.T;
      for (auto& F : f.feet) F = G * F;
    }
    const Alignment a = align_cycle(moved, ref);
    CHECK(a.yaw == doctest::Approx(-M_PI / 6.0).epsilon(1e-12));
    CHECK(a.translation.y() == 0.0);
    const Mat3 R = a.transform().R();
    CHECK(R(1, 1) == 1.0);
    CHECK(R(0, 1) == 0.0);
    CHECK(R(1, 0) == 0.0);
    const SRBCycle back = apply_alignment(moved, a);
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK((back[i].T.p() - cycle[i].T.p()).norm() < 1e-9);
      CHECK((back[i].feet[0].p() - cycle[i].feet[0].p()).norm() < 1e-9);
    }
  }
  const auto ref = synth_reference(default_synth_params(GaitKind::Walk));
  SRBCycle partial = cycle_from_reference(ref);
  partial.resize(partial.size() / 2);
  CHECK_THROWS_AS(align_cycle(partial, ref), Error);
  CHECK_THROWS_AS(align_baseline(BaselineMotion{}, ref), Error);
}

TEST_CASE("delta identities") {
  const Skeleton sk = default_skeleton();
  const auto ref = synth_reference(default_synth_params(GaitKind::Walk));
  const FullBodyMotion fb = synth_fullbody_reference(sk, ref);
  REQUIRE(fb.size() == ref.size());
  const SRBCycle derived = srb_cycle_from_fullbody(sk, fb);

  const DeltaTables zero = compute_deltas(BaselineMotion{{derived}}, sk, fb);
  REQUIRE(zero.size() == fb.size());
  for (int i = 0; i < zero.size(); ++i) {
    CHECK(zero.com[i].vector().norm() < 1e-9);
    CHECK(zero.velocity[i].norm() < 1e-9);
    for (int f = 0; f < kNumFeet; ++f)
      for (int k = 0; k < kPointsPerFoot; ++k) {
        const Vec3 c = derived[i].feet[f].apply(zero.contacts[i][f][k]);
        CHECK((c - fk(sk, fb.poses[i]).contacts[sk.contact_index(f, k)]).norm() < 1e-12);
      }
  }

  // Constructed offset: baseline frame T = T_ref exp(-xi) gives delta xi.
  const Twist xi(Vec3(0.05, -0.2, 0.1), Vec3(0.02, -0.04, 0.03));
  const Vec6 u = (Vec6() << 0.1, 0.2, -0.1, 0.3, 0.0, -0.2).finished();
  SRBCycle plus = derived, minus = derived;
  for (std::size_t i = 0; i < derived.size(); ++i) {
    plus[i].T = derived[i].T * exp_se3(xi * -1.0);
    minus[i].T = derived[i].T * exp_se3(xi);
    plus[i].velocity = derived[i].velocity + u;
  }
  const DeltaTables one = compute_deltas(BaselineMotion{{plus}}, sk, fb);
  for (int i = 0; i < one.size(); ++i) {
    CHECK((one.com[i].vector() - xi.vector()).norm() < 1e-9);
    const Mat3 Ry = yaw_only(plus[i].T.R()).transpose();
    Vec6 expect;
    expect << Ry * -u.head<3>(), Ry * -u.tail<3>();
    CHECK((one.velocity[i] - expect).norm() < 1e-9);
  }
  const DeltaTables two = compute_deltas(BaselineMotion{{plus, minus}}, sk, fb);
  CHECK(two.cycles == 2);
  for (int i = 0; i < two.size(); ++i) CHECK(two.com[i].vector().norm() < 1e-9);

  SRBCycle short_cycle = derived;
  short_cycle.resize(10);
  CHECK_THROWS_AS(compute_deltas(BaselineMotion{{short_cycle}}, sk, fb), Error);
}

TEST_CASE("delta file round trip") {
  const Skeleton sk = default_skeleton();
  const auto ref = synth_reference(default_synth_params(GaitKind::InPlaceStep));
  const FullBodyMotion fb = synth_fullbody_reference(sk, ref);
  SRBCycle shifted = srb_cycle_from_fullbody(sk, fb);
  std::mt19937_64 rng(11);
  for (auto& f : shifted) {
    f.T = f.T * exp_se3(Twist(random_vec3(rng, 0.1), random_vec3(rng, 0.1)));
    f.velocity += random_velocity(sk, rng).head<6>() / 3.0;
  }
  const DeltaTables d = compute_deltas(BaselineMotion{{shifted}}, sk, fb);
  const std::string path = "test_fullbody_deltas.json";
  save_deltas(d, path);
  const DeltaTables e = load_deltas(path);
  std::remove(path.c_str());
  REQUIRE(e.size() == d.size());
  CHECK(e.cycles == d.cycles);
  for (int i = 0; i < d.size(); ++i) {
    CHECK(e.com[i] == d.com[i]);
    CHECK(e.velocity[i] == d.velocity[i]);
    for (int f = 0; f < kNumFeet; ++f)
      for (int k = 0; k < kPointsPerFoot; ++k) CHECK(e.contacts[i][f][k] == d.contacts[i][f][k]);
  }
  const DeltaSample s = sample_deltas(d, kTwoPi * 3 / d.size());
  CHECK(s.com == d.com[3]);
  CHECK_THROWS_AS(parse_deltas("{\"format\": \"other\"}"), Error);
  CHECK_THROWS_AS(load_deltas("/nonexistent/deltas.json"), Error);
}

TEST_CASE("one-sided norm") {
  CHECK(one_sided_norm(Eigen::Vector2d(-1.0, -3.0)) == 0.0);
  CHECK(one_sided_norm(Eigen::Vector2d(1.0, -2.0)) == 1.0);
  VecX g;
  one_sided_norm(Eigen::Vector3d(-0.5, 2.0, 0.0), &g);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 4.0);
  CHECK(g[2] == 0.0);
  // Subgradient agrees with central differences away from the kink.
  const Eigen::Vector2d v(0.7, -0.4);
  one_sided_norm(v, &g);
  for (int i = 0; i < 2; ++i) {
    Eigen::Vector2d p = v, m = v;
    p[i] += 1e-6;
    m[i] -= 1e-6;
    CHECK(g[i] == doctest::Approx((one_sided_norm(p) - one_sided_norm(m)) / 2e-6).epsilon(1e-6));
  }
}

TEST_CASE("mmik cost gradient matches finite differences") {
  const Skeleton sk = default_skeleton();
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const FullBodyPose x = random_pose(sk, rng);
    MMIKTargets t = random_targets(sk, x, rng);
    if (trial % 2 == 0) t.push = PushTarget{Vec3(1.0, 0.0, 0.0), 50.0};  // active
    MMIKWeights w;
    VecX g;
    mmik_cost(sk, t, w, x, &g);
    VecX fd(sk.num_dofs());
    for (int i = 0; i < fd.size(); ++i) {
      VecX e = VecX::Zero(fd.size());
      e[i] = 1e-6;
      fd[i] = (mmik_cost(sk, t, w, retract(x, e)) - mmik_cost(sk, t, w, retract(x, -e))) / 2e-6;
    }
    CHECK((g - fd).norm() <= 1e-5 * fd.norm());
  }
}

TEST_CASE("mmik push term") {
  const Skeleton sk = default_skeleton();
  std::mt19937_64 rng(15);
  const FullBodyPose x = random_pose(sk, rng);
  MMIKTargets t = random_targets(sk, x, rng);
  MMIKWeights w;
  VecX g0, g1, g2;
  const double c0 = mmik_cost(sk, t, w, x, &g0);
  MMIKWeights no_push = w;
  no_push.w_p = 0.0;
  const double c1 = mmik_cost(sk, t, no_push, x, &g1);
  CHECK(c0 == c1);
  CHECK(g0 == g1);
  // Already moving faster than the threshold along the force: no cost either.
  const Vec3 base_velocity = pose_difference(x, *t.x_prev).segment<3>(3) / t.dt;
  t.push = PushTarget{base_velocity.normalized(), 0.5 * base_velocity.norm()};
  CHECK(mmik_cost(sk, t, w, x, &g2) == doctest::Approx(c0).epsilon(1e-14));
  t.push = PushTarget{base_velocity.normalized(), 2.0 * base_velocity.norm()};
  CHECK(mmik_cost(sk, t, w, x) > c0);
}

TEST_CASE("mmik with only regularization returns the desired pose") {
  const Skeleton sk = default_skeleton();
  std::mt19937_64 rng(17);
  const FullBodyPose x0 = random_pose(sk, rng);
  const MMIKTargets t = random_targets(sk, x0, rng);
  MMIKWeights w;
  w.w_contact = w.w_g = w.w_m = w.w_p = w.w_v = 0.0;
  w.w_r = 1.0;
  const MMIKResult r = mmik_solve(sk, x0, t, w);
  CHECK(r.converged);
  CHECK(pose_difference(r.pose, t.x_bar).norm() < 1e-9);
}

TEST_CASE("mmik reaches feasible contact targets on a planar leg") {
  const Skeleton leg = planar_leg();
  std::mt19937_64 rng(19);
  const double L1 = 0.5, L2 = 0.5;
  int solved = 0;
  for (int trial = 0; trial < 20; ++trial) {
    // Analytic IK: pick an ankle point within reach and a foot angle.
    const double reach = uniform(rng, 0.5, 0.95);
    const double dir = uniform(rng, -0.6, 0.6);  // angle from straight down, positive toward -z
    const double y = -reach * std::cos(dir), z = -reach * std::sin(dir);
    const double knee = M_PI - std::acos((L1 * L1 + L2 * L2 - reach * reach) / (2.0 * L1 * L2));
    const double hip = dir - std::atan2(L2 * std::sin(knee), L1 + L2 * std::cos(knee));
    const double ankle = uniform(rng, -0.5, 0.5);
    FullBodyPose oracle = FullBodyPose::zero(leg);
    oracle.q << hip, knee, ankle;
    const Kinematics ko = fk(leg, oracle);
    // The oracle places the ankle where intended.
    CHECK((ko.frames[3].p() - Vec3(0.0, y, z)).norm() < 1e-12);

    MMIKTargets t;
    t.x_bar = FullBodyPose::zero(leg);
    t.x_bar.q << 0.0, 0.3, 0.0;
    t.xdot_bar = VecX::Zero(leg.num_dofs());
    t.A = MatX::Zero(6, leg.num_dofs());
    t.contacts = ko.contacts;
    MMIKWeights w;
    w.w_contact = 1.0;
    w.w_g = w.w_m = w.w_p = w.w_v = 0.0;
    w.w_r = 1e-10;
    MMIKOptions opt;
    opt.fix_base = true;
    const MMIKResult r = mmik_solve(leg, t.x_bar, t, w, opt);
    CHECK(r.contact_residual < 1e-3);
    CHECK(r.pose.base.p() == t.x_bar.base.p());
    solved += r.contact_residual < 1e-3;
    for (std::size_t i = 1; i < r.cost_history.size(); ++i) CHECK(r.cost_history[i] <= r.cost_history[i - 1]);
  }
  CHECK(solved == 20);
}

TEST_CASE("mmik cost never increases across iterations") {
  const Skeleton sk = default_skeleton();
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const FullBodyPose x = random_pose(sk, rng);
    MMIKTargets t = random_targets(sk, x, rng);
    t.push = PushTarget{Vec3(0.0, 0.0, 1.0), 1.0};
    const MMIKResult r = mmik_solve(sk, x, t, MMIKWeights{});
    REQUIRE(r.cost_history.size() >= 2);
    for (std::size_t i = 1; i < r.cost_history.size(); ++i) CHECK(r.cost_history[i] <= r.cost_history[i - 1]);
    CHECK(r.cost < r.cost_history.front());
  }
}

TEST_CASE("synthetic full-body reference follows the srb feet") {
  const Skeleton sk = default_skeleton();
  for (GaitKind kind : {GaitKind::InPlaceStep, GaitKind::Walk}) {
    const auto ref = synth_reference(default_synth_params(kind));
    const FullBodyMotion fb = synth_fullbody_reference(sk, ref);
    REQUIRE(fb.size() == ref.size());
    for (int i = 0; i < fb.size(); ++i) {
      const RefSample r = sample_reference(ref, kTwoPi * i / fb.size());
      const Kinematics k = fk(sk, fb.poses[i]);
      for (int f = 0; f < kNumFeet; ++f) {
        if (!r.contact[f]) continue;
        const Vec3 heel = k.contacts[sk.contact_index(f, 0)];
        CHECK(std::abs(heel.y()) < 5e-3);
        CHECK((heel - r.foot_position[f]).cwiseAbs().maxCoeff() < 0.15);
      }
    }
    // Central differences of the poses reproduce the stored velocities' base motion.
    const VecX v = fb.velocity(0.0);
    CHECK(v.size() == sk.num_dofs());
    CHECK(v.allFinite());
  }
}

TEST_CASE("skeleton file round trip and errors") {
  const Skeleton sk = default_skeleton();
  const Skeleton back = parse_skeleton(skeleton_json(sk));
  REQUIRE(back.num_dofs() == sk.num_dofs());
  CHECK(back.total_mass() == doctest::Approx(sk.total_mass()));
  std::mt19937_64 rng(23);
  const FullBodyPose x = random_pose(sk, rng);
  const Kinematics a = fk(sk, x), b = fk(back, x);
  for (std::size_t i = 0; i < a.contacts.size(); ++i) CHECK((a.contacts[i] - b.contacts[i]).norm() < 1e-12);
  CHECK_THROWS_AS(parse_skeleton("{\"links\": [{\"name\": \"a\", \"mass\": 1, \"inertia\": [1,1,1], \"joint\": "
                                 "{\"type\": \"hinge\"}}]}"),
                  Error);
  try {
    parse_skeleton("{\"links\": [{\"name\": \"a\", \"mas\": 1}]}");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("links[0].mas") != std::string::npos);
  }
}

TEST_CASE("pose csv round trip") {
  const Skeleton sk = default_skeleton();
  std::mt19937_64 rng(25);
  std::vector<FullBodyPose> poses{random_pose(sk, rng), random_pose(sk, rng)};
  const std::string path = "test_fullbody_poses.csv";
  {
    std::ofstream out(path);
    write_pose_header(out, sk);
    for (std::size_t i = 0; i < poses.size(); ++i) write_pose_row(out, static_cast<int>(i), 0.1 * i, poses[i]);
  }
  const auto back = load_pose_csv(path, sk);
  std::remove(path.c_str());
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK((back[i].q - poses[i].q).norm() == 0.0);
    CHECK((back[i].base.R() - poses[i].base.R()).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("collect cycles from a simulated trajectory") {
  const auto ref = synth_reference(default_synth_params(GaitKind::InPlaceStep));
  Simulator sim;
  SRBState s = sim.reset(ref, 0.0);
  std::vector<SRBState> traj{s};
  for (int k = 0; k < 200; ++k) {
    s = sim.step(s, Action{}, ref, std::nullopt, Terrain{});
    traj.push_back(s);
  }
  const int expected = static_cast<int>(std::floor((kTwoPi * s.cycle + s.psi) / kTwoPi));
  const BaselineMotion b = collect_cycles(traj, ref.size());
  CHECK(static_cast<int>(b.cycles.size()) == expected);
  for (const auto& c : b.cycles) {
    REQUIRE(static_cast<int>(c.size()) == ref.size() + 1);
    CHECK(c.front().psi == 0.0);
  }
  CHECK((b.cycles[0][0].T.p() - traj[0].T.p()).norm() < 1e-12);
  std::vector<SRBState> short_traj(traj.begin(), traj.begin() + 10);
  CHECK_THROWS_AS(collect_cycles(short_traj, ref.size()), Error);
}
