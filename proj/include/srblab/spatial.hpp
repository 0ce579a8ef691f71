#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace srblab {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Quat = Eigen::Quaterniond;

class Terrain;

/// Global vertical axis. Gravity acts along -y.
inline Vec3 up_axis() { return Vec3::UnitY(); }

/// se(3) element, angular part first. Used both for velocities (rad/s, m/s)
/// and for displacements (rad, m) such as log outputs.
struct Twist {
  Vec3 angular = Vec3::Zero();
  Vec3 linear = Vec3::Zero();

  Twist() = default;
  Twist(const Vec3& w, const Vec3& v) : angular(w), linear(v) {}
  explicit Twist(const Vec6& xi) : angular(xi.head<3>()), linear(xi.tail<3>()) {}

  Vec6 vector() const {
    Vec6 out;
    out << angular, linear;
    return out;
  }
  static Twist zero() { return {}; }

  Twist operator+(const Twist& o) const { return {angular + o.angular, linear + o.linear}; }
  Twist operator-(const Twist& o) const { return {angular - o.angular, linear - o.linear}; }
  Twist operator*(double s) const { return {angular * s, linear * s}; }
  bool operator==(const Twist& o) const { return angular == o.angular && linear == o.linear; }
};

/// Element of SE(3): x_parent = R x_child + p.
class RigidTransform {
 public:
  RigidTransform() : R_(Mat3::Identity()), p_(Vec3::Zero()) {}

  static RigidTransform identity() { return {}; }
  static RigidTransform translation(const Vec3& p) { return unchecked(Mat3::Identity(), p); }
  static RigidTransform rotation(const Mat3& R) { return unchecked(R, Vec3::Zero()); }
  /// No orthonormality check; for internal use on rotations known to be valid.
  static RigidTransform unchecked(const Mat3& R, const Vec3& p) {
    RigidTransform T;
    T.R_ = R;
    T.p_ = p;
    return T;
  }

  const Mat3& R() const { return R_; }
  const Vec3& p() const { return p_; }

  RigidTransform inverse() const { return unchecked(R_.transpose(), -(R_.transpose() * p_)); }
  RigidTransform operator*(const RigidTransform& o) const { return unchecked(R_ * o.R_, R_ * o.p_ + p_); }
  Vec3 apply(const Vec3& x) const { return R_ * x + p_; }
  Mat4 matrix() const;

 private:
  Mat3 R_;
  Vec3 p_;
};

Mat3 skew(const Vec3& v);
Mat3 rot_x(double angle);
Mat3 rot_y(double angle);
Mat3 rot_z(double angle);

/// Builds a transform; throws InvalidInput when R deviates from SO(3) by more than 1e-6.
RigidTransform frame_from(const Mat3& rotation, const Vec3& position);
bool is_rotation(const Mat3& R, double tol);

Mat3 exp_so3(const Vec3& w);
/// Principal-branch logarithm; throws BranchAmbiguity when the angle is within 1e-6 of pi.
Vec3 log_so3(const Mat3& R);
RigidTransform exp_se3(const Twist& xi);
Twist log_se3(const RigidTransform& T);

/// 6x6 twist adjoint for (angular, linear) ordering: [[R, 0], [[p]x R, R]].
Mat6 adjoint(const Mat3& rotation, const Vec3& translation);
inline Mat6 adjoint(const RigidTransform& T) { return adjoint(T.R(), T.p()); }

/// Replaces y with the ground height below (x, z): 0 on flat ground.
Vec3 proj_y(const Vec3& p);
Vec3 proj_y(const Vec3& p, const Terrain& terrain);

/// Heading angle about +y of the body z-axis; throws SingularHeading when it is vertical.
double heading_of(const Mat3& R);
/// Rotation about the global vertical whose z-axis is the horizontal projection of R's z-axis.
Mat3 yaw_only(const Mat3& R);

/// Minimum rotation angle between two rotations, in [0, pi].
double rot_distance(const Mat3& R1, const Mat3& R2);

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);
/// Wraps to [0, 2 pi).
double wrap_phase(double psi);

/// Unit quaternion (w, x, y, z) with w >= 0.
Eigen::Vector4d quaternion_wxyz(const Mat3& R);
/// Slerp that returns the end points bitwise at s = 0 and s = 1.
Mat3 slerp(const Mat3& R0, const Mat3& R1, double s);

/// Frame at the COM whose y-axis is global vertical, heading-aligned.
RigidTransform forward_facing_frame(const RigidTransform& T);
/// Forward-facing frame dropped onto the ground below the COM.
RigidTransform projected_frame(const RigidTransform& T, const Terrain& terrain);
RigidTransform projected_frame(const RigidTransform& T);

}  // namespace srblab
