#include <doctest.h>

#include <cmath>
#include <numbers>

#include "srblab/error.hpp"
#include "srblab/spatial.hpp"
#include "srblab/terrain.hpp"
#include "test_util.hpp"

using namespace srblab;
using srblab::testing::random_rotation;
using srblab::testing::random_vec3;

namespace {

constexpr double kPi = std::numbers::pi;

Mat4 hat4(const Twist& xi) {
  Mat4 m = Mat4::Zero();
  m.topLeftCorner<3, 3>() = skew(xi.angular);
  m.topRightCorner<3, 1>() = xi.linear;
  return m;
}

// log(I + X) = sum (-1)^{k+1} X^k / k, valid for small X.
Mat4 matrix_log_series(const Mat4& M) {
  const Mat4 X = M - Mat4::Identity();
  Mat4 term = X, sum = Mat4::Zero();
  for (int k = 1; k < 400; ++k) {
    sum += ((k % 2 == 1) ? 1.0 : -1.0) * term / k;
    term = term * X;
  }
  return sum;
}

}  // namespace

TEST_CASE("frame_from assembles the homogeneous matrix") {
  CHECK(frame_from(Mat3::Identity(), Vec3::Zero()).matrix().isApprox(Mat4::Identity()));
  const auto T = frame_from(Mat3::Identity(), Vec3(1, 2, 3));
  CHECK(T.apply(Vec3::Zero()).isApprox(Vec3(1, 2, 3)));

  const Mat3 R = rot_y(kPi / 2);
  Mat4 oracle = Mat4::Identity();
  oracle(0, 0) = std::cos(kPi / 2);
  oracle(0, 2) = std::sin(kPi / 2);
  oracle(2, 0) = -std::sin(kPi / 2);
  oracle(2, 2) = std::cos(kPi / 2);
  oracle(1, 3) = 1.0;
  CHECK((frame_from(R, Vec3(0, 1, 0)).matrix() - oracle).cwiseAbs().maxCoeff() < 1e-15);

  Mat3 bad = Mat3::Identity();
  bad(0, 1) = 1e-3;
  CHECK_THROWS_AS(frame_from(bad, Vec3::Zero()), Error);
}

TEST_CASE("exp_se3 closed form") {
  CHECK(exp_se3(Twist{}).matrix().isApprox(Mat4::Identity()));
  const auto T = exp_se3(Twist(Vec3(0, kPi / 2, 0), Vec3::Zero()));
  const Mat3 rodrigues = Eigen::AngleAxisd(kPi / 2, Vec3::UnitY()).toRotationMatrix();
  CHECK((T.R() - rodrigues).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(T.p().norm() < 1e-15);
  const auto P = exp_se3(Twist(Vec3::Zero(), Vec3(1, 0, 0)));
  CHECK(P.R().isApprox(Mat3::Identity()));
  CHECK((P.p() - Vec3(1, 0, 0)).norm() < 1e-15);
}

TEST_CASE("log_se3 matches matrix-log series and round trips") {
  CHECK(log_se3(RigidTransform::identity()).vector().norm() == 0.0);

  const auto T = RigidTransform::unchecked(rot_y(0.3), Vec3(0.1, 0, 0));
  const Mat4 L = matrix_log_series(T.matrix());
  const Twist xi = log_se3(T);
  CHECK((skew(xi.angular) - L.topLeftCorner<3, 3>()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((xi.linear - L.topRightCorner<3, 1>()).norm() < 1e-12);

  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    Twist x(random_vec3(rng), random_vec3(rng));
    const double s = srblab::testing::uniform(rng, 0.0, 1.0) / x.vector().norm();
    x = x * s;
    CHECK((log_se3(exp_se3(x)).vector() - x.vector()).norm() < 1e-9);
  }
  // tiny angles go through the series branch
  const Twist tiny(Vec3(3e-9, -1e-9, 2e-9), Vec3(0.2, 0.1, -0.3));
  CHECK((log_se3(exp_se3(tiny)).vector() - tiny.vector()).norm() < 1e-12);
}

TEST_CASE("log near pi is rejected") {
  CHECK_THROWS_AS(log_so3(rot_y(kPi)), Error);
  try {
    log_se3(RigidTransform::rotation(rot_x(kPi - 1e-8)));
    FAIL("expected branch error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BranchAmbiguity);
  }
}

TEST_CASE("adjoint structure and conjugation") {
  CHECK(adjoint(Mat3::Identity(), Vec3::Zero()).isApprox(Mat6::Identity()));
  const Mat6 A = adjoint(rot_y(kPi / 2), Vec3::Zero());
  CHECK(A.topLeftCorner<3, 3>().isApprox(rot_y(kPi / 2)));
  CHECK(A.bottomRightCorner<3, 3>().isApprox(rot_y(kPi / 2)));
  CHECK(A.topRightCorner<3, 3>().norm() == 0.0);
  CHECK(A.bottomLeftCorner<3, 3>().norm() < 1e-15);

  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    const auto T = RigidTransform::unchecked(random_rotation(rng), random_vec3(rng));
    const Twist xi(random_vec3(rng), random_vec3(rng));
    const Mat4 conj = T.matrix() * hat4(xi) * T.inverse().matrix();
    const Twist mapped(adjoint(T) * xi.vector());
    CHECK((hat4(mapped) - conj).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("adjoint composition property") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 200; ++i) {
    const auto T1 = RigidTransform::unchecked(random_rotation(rng), random_vec3(rng));
    const auto T2 = RigidTransform::unchecked(random_rotation(rng), random_vec3(rng));
    CHECK((adjoint(T1 * T2) - adjoint(T1) * adjoint(T2)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("proj_y on flat ground and heightfields") {
  CHECK(proj_y(Vec3(1, 2, 3)) == Vec3(1, 0, 3));
  CHECK(proj_y(Vec3(0, 5, 0)) == Vec3(0, 0, 0));

  // 3x5 grid with spacing 1 from (0, 0); h(1,3) = 0.4
  std::vector<double> h(15, 0.0);
  h[3 * 3 + 1] = 0.4;
  const Terrain t = Terrain::heightfield(0.0, 0.0, 1.0, 3, 5, h);
  CHECK(proj_y(Vec3(1, 2, 3), t).isApprox(Vec3(1, 0.4, 3)));
  // bilinear midpoint oracle: halfway between (1,3) and (2,3)
  CHECK(t.height(1.5, 3.0) == doctest::Approx(0.2));
  CHECK(t.height(1.5, 3.5) == doctest::Approx(0.1));
  CHECK_THROWS_AS(proj_y(Vec3(10, 0, 0), t), Error);
}

TEST_CASE("yaw_only heading extraction") {
  CHECK(yaw_only(Mat3::Identity()).isApprox(Mat3::Identity()));
  CHECK((yaw_only(rot_y(1.1)) - rot_y(1.1)).cwiseAbs().maxCoeff() < 1e-12);
  const Mat3 R = rot_y(0.7) * rot_x(0.3);
  const Vec3 z = R.col(2);
  const double oracle = std::atan2(z.x(), z.z());
  CHECK(oracle == doctest::Approx(0.7).epsilon(1e-12));
  CHECK((yaw_only(R) - rot_y(0.7)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_THROWS_AS(yaw_only(rot_x(kPi / 2)), Error);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const Mat3 Y = yaw_only(random_rotation(rng));
    CHECK((yaw_only(Y) - Y).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rot_distance matches the quaternion angle") {
  const Mat3 R = rot_z(0.4);
  CHECK(rot_distance(R, R) == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(rot_distance(Mat3::Identity(), rot_y(kPi / 2)) == doctest::Approx(kPi / 2));

  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const Mat3 A = random_rotation(rng), B = random_rotation(rng), C = random_rotation(rng);
    const double oracle = Eigen::AngleAxisd(A.transpose() * B).angle();
    CHECK(std::abs(rot_distance(A, B) - oracle) < 1e-7);
    CHECK(std::abs(rot_distance(A, B) - rot_distance(B, A)) < 1e-12);
    CHECK(rot_distance(A, C) <= rot_distance(A, B) + rot_distance(B, C) + 1e-9);
  }
}

TEST_CASE("angle wrapping") {
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(350.0 * kPi / 180 - 10.0 * kPi / 180) == doctest::Approx(-20.0 * kPi / 180));
  CHECK(wrap_phase(2 * kPi) == 0.0);
  CHECK(wrap_phase(-0.5) == doctest::Approx(2 * kPi - 0.5));
}

TEST_CASE("quaternion hemisphere and slerp endpoints") {
  const Mat3 R = rot_x(3.0);
  const auto q = quaternion_wxyz(R);
  CHECK(q[0] >= 0.0);
  CHECK(q.norm() == doctest::Approx(1.0));
  const Mat3 A = rot_y(0.2), B = rot_x(0.5);
  CHECK(slerp(A, B, 0.0) == A);
  CHECK(slerp(A, B, 1.0) == B);
  CHECK(rot_distance(slerp(A, B, 0.5), A) == doctest::Approx(0.5 * rot_distance(A, B)));
}
