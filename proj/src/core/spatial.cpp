#include "srblab/spatial.hpp"

#include <cmath>
#include <numbers>

#include "srblab/error.hpp"
#include "srblab/terrain.hpp"

namespace srblab {

namespace {

constexpr double kSmallAngle = 1e-8;

Vec3 vee(const Mat3& S) { return {S(2, 1), S(0, 2), S(1, 0)}; }

}  // namespace

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = R_;
  m.topRightCorner<3, 1>() = p_;
  return m;
}

Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return S;
}

Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 R;
  R << 1, 0, 0, 0, c, -s, 0, s, c;
  return R;
}

Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 R;
  R << c, 0, s, 0, 1, 0, -s, 0, c;
  return R;
}

Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 R;
  R << c, -s, 0, s, c, 0, 0, 0, 1;
  return R;
}

bool is_rotation(const Mat3& R, double tol) {
  if (!R.allFinite()) return false;
  if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(R.determinant() - 1.0) <= tol;
}

RigidTransform frame_from(const Mat3& rotation, const Vec3& position) {
  if (!is_rotation(rotation, 1e-6)) fail(ErrorCode::InvalidInput, "frame_from: rotation is not orthonormal");
  if (!position.allFinite()) fail(ErrorCode::InvalidInput, "frame_from: non-finite position");
  return RigidTransform::unchecked(rotation, position);
}

Mat3 exp_so3(const Vec3& w) {
  const double theta = w.norm();
  double a, b;
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0 - t2 * t2 * t2 / 5040.0;
    b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0 - t2 * t2 * t2 / 40320.0;
  } else {
    const double half = std::sin(0.5 * theta) / (0.5 * theta);
    a = std::sin(theta) / theta;
    b = 0.5 * half * half;
  }
  const Mat3 W = skew(w);
  return Mat3::Identity() + a * W + b * W * W;
}

Vec3 log_so3(const Mat3& R) {
  const Vec3 axis2 = vee(R - R.transpose());  // 2 sin(theta) * axis
  const double c = 0.5 * (R.trace() - 1.0);
  const double s = 0.5 * axis2.norm();
  const double theta = std::atan2(s, c);
  if (theta > std::numbers::pi - 1e-6) fail(ErrorCode::BranchAmbiguity, "log: rotation angle at or near pi");
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    return 0.5 * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0 + 31.0 * t2 * t2 * t2 / 15120.0) * axis2;
  }
  return (0.5 * theta / s) * axis2;
}

RigidTransform exp_se3(const Twist& xi) {
  const Vec3& w = xi.angular;
  const double theta = w.norm();
  double b, c;
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0 - t2 * t2 * t2 / 40320.0;
    c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2 * t2 * t2 / 362880.0;
  } else {
    const double half = std::sin(0.5 * theta) / (0.5 * theta);
    b = 0.5 * half * half;
    c = (theta - std::sin(theta)) / (theta * theta * theta);
  }
  const Mat3 W = skew(w);
  const Mat3 V = Mat3::Identity() + b * W + c * W * W;
  return RigidTransform::unchecked(exp_so3(w), V * xi.linear);
}

Twist log_se3(const RigidTransform& T) {
  const Vec3 w = log_so3(T.R());
  const double theta = w.norm();
  double d;
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2 * t2 * t2 / 1209600.0;
  } else {
    const double h = 0.5 * theta;
    d = (1.0 - h * std::cos(h) / std::sin(h)) / (theta * theta);
  }
  const Mat3 W = skew(w);
  const Mat3 Vinv = Mat3::Identity() - 0.5 * W + d * W * W;
  return {w, Vinv * T.p()};
}

Mat6 adjoint(const Mat3& rotation, const Vec3& translation) {
  Mat6 A = Mat6::Zero();
  A.topLeftCorner<3, 3>() = rotation;
  A.bottomRightCorner<3, 3>() = rotation;
  A.bottomLeftCorner<3, 3>() = skew(translation) * rotation;
  return A;
}

Vec3 proj_y(const Vec3& p) { return {p.x(), 0.0, p.z()}; }

Vec3 proj_y(const Vec3& p, const Terrain& terrain) {
  return {p.x(), terrain.height(p.x(), p.z()), p.z()};
}

double heading_of(const Mat3& R) {
  const Vec3 z = R.col(2);
  if (std::hypot(z.x(), z.z()) <= 1e-6) fail(ErrorCode::SingularHeading, "heading: body z-axis is vertical");
  return std::atan2(z.x(), z.z());
}

Mat3 yaw_only(const Mat3& R) { return rot_y(heading_of(R)); }

double rot_distance(const Mat3& R1, const Mat3& R2) {
  const double c = std::clamp(0.5 * ((R1.transpose() * R2).trace() - 1.0), -1.0, 1.0);
  return std::acos(c);
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a + std::numbers::pi, two_pi);
  if (r <= 0.0) r += two_pi;
  return r - std::numbers::pi;
}

double wrap_phase(double psi) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(psi, two_pi);
  if (r < 0.0) r += two_pi;
  if (r >= two_pi) r = 0.0;
  return r;
}

Eigen::Vector4d quaternion_wxyz(const Mat3& R) {
  Quat q(R);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return {q.w(), q.x(), q.y(), q.z()};
}

Mat3 slerp(const Mat3& R0, const Mat3& R1, double s) {
  if (s == 0.0) return R0;
  if (s == 1.0) return R1;
  const Quat q0(R0), q1(R1);
  return q0.slerp(s, q1).normalized().toRotationMatrix();
}

RigidTransform forward_facing_frame(const RigidTransform& T) {
  return RigidTransform::unchecked(yaw_only(T.R()), T.p());
}

RigidTransform projected_frame(const RigidTransform& T, const Terrain& terrain) {
  return RigidTransform::unchecked(yaw_only(T.R()), proj_y(T.p(), terrain));
}

RigidTransform projected_frame(const RigidTransform& T) {
  return RigidTransform::unchecked(yaw_only(T.R()), proj_y(T.p()));
}

}  // namespace srblab
