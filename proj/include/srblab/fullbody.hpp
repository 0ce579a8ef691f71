#pragma once

#include <array>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "srblab/sim.hpp"

namespace srblab {

/// Joint of a link relative to its parent. Rotary joints apply their axes in
/// order at the joint origin: R = exp(a_1 q_1) exp(a_2 q_2) ...
enum class JointType { Free, Fixed, Revolute, Universal, Spherical };
const char* to_string(JointType type);

struct Link {
  std::string name;
  int parent = -1;
  JointType joint = JointType::Fixed;
  std::vector<Vec3> axes;         // unit axes in the parent frame after the offset
  Vec3 offset = Vec3::Zero();     // joint origin in the parent link frame
  double mass = 0.0;
  Vec3 com = Vec3::Zero();        // link frame
  Mat3 inertia = Mat3::Identity();  // about the link COM, link frame
  int dof_index = -1;             // first joint coordinate, -1 when the joint has none
};

/// Contact point attached to a foot link; per foot the points are ordered heel, toe.
struct ContactAttachment {
  int link = 0;
  int foot = 0;
  int point = 0;
  Vec3 position = Vec3::Zero();  // link frame
};

class Skeleton {
 public:
  Skeleton() = default;
  Skeleton(std::vector<Link> links, std::vector<ContactAttachment> contacts);

  const std::vector<Link>& links() const { return links_; }
  const std::vector<ContactAttachment>& contacts() const { return contacts_; }
  int num_links() const { return static_cast<int>(links_.size()); }
  int num_joint_dofs() const { return num_joint_dofs_; }
  /// Generalized velocity size: base angular (global), base linear, joints.
  int num_dofs() const { return 6 + num_joint_dofs_; }
  double total_mass() const { return total_mass_; }
  int find_link(const std::string& name) const;
  /// Index into contacts() of point k on foot j, or -1.
  int contact_index(int foot, int point) const;
  /// Joint coordinates that move link i, root first.
  const std::vector<int>& ancestor_dofs(int link) const { return ancestor_dofs_[link]; }
  /// Link owning joint coordinate d.
  int dof_link(int d) const { return dof_link_[d]; }
  /// Throws InvalidInput unless every foot carries a heel and a toe point.
  void require_feet() const;

 private:
  std::vector<Link> links_;
  std::vector<ContactAttachment> contacts_;
  std::vector<std::vector<int>> ancestor_dofs_;
  std::vector<int> dof_link_;
  int num_joint_dofs_ = 0;
  double total_mass_ = 0.0;
};

/// 29-DOF humanoid of 60 kg: floating pelvis, 3-DOF waist, per arm shoulder 3 and
/// elbow 1, per leg hip 3, knee 1 and ankle 2.
Skeleton default_skeleton();

Skeleton load_skeleton(const std::string& path);
Skeleton parse_skeleton(const std::string& json_text);
std::string skeleton_json(const Skeleton& skeleton);

struct FullBodyPose {
  RigidTransform base;
  VecX q;  // joint coordinates

  static FullBodyPose zero(const Skeleton& skeleton);
};

/// Tangent difference a - b: (log(R_a R_b^T), p_a - p_b, q_a - q_b).
VecX pose_difference(const FullBodyPose& a, const FullBodyPose& b);
/// Left perturbation: R <- exp(dw) R, p <- p + dp, q <- q + dq.
FullBodyPose retract(const FullBodyPose& x, const Eigen::Ref<const VecX>& dz);
/// Rigid motion G applied to the whole body.
FullBodyPose transform_pose(const RigidTransform& G, const FullBodyPose& x);
/// Linear interpolation of joints, slerp of the base rotation.
FullBodyPose interpolate_pose(const FullBodyPose& a, const FullBodyPose& b, double s);

struct Kinematics {
  std::vector<RigidTransform> frames;  // per link, global
  std::vector<Vec3> link_com;          // per link, global
  std::vector<Vec3> dof_axis;          // per joint coordinate, global
  std::vector<Vec3> dof_origin;        // per joint coordinate, global
  std::vector<Vec3> contacts;          // per attachment, global
  Vec3 com = Vec3::Zero();
  RigidTransform base;
};

Kinematics fk(const Skeleton& skeleton, const FullBodyPose& x);

/// 3 x N Jacobian of the global velocity of a point fixed to `link`.
MatX point_jacobian(const Skeleton& skeleton, const Kinematics& kin, int link, const Vec3& point);
/// 3 x N Jacobian of the global angular velocity of `link`.
MatX angular_jacobian(const Skeleton& skeleton, const Kinematics& kin, int link);

/// Composite rigid-body inertia about the COM in global orientation, (angular, linear).
Mat6 crb_inertia(const Skeleton& skeleton, const Kinematics& kin);
Mat6 crb_inertia(const Skeleton& skeleton, const FullBodyPose& x);
/// Centroidal momentum matrix: h = J_m xdot, angular about the COM then linear.
MatX momentum_jacobian(const Skeleton& skeleton, const Kinematics& kin);
MatX momentum_jacobian(const Skeleton& skeleton, const FullBodyPose& x);
/// I_f^-1 J_m: maps a generalized velocity to the average spatial velocity (global angular, COM linear).
MatX centroidal_map(const Skeleton& skeleton, const FullBodyPose& x);

/// COM frame of a full-body pose: pelvis orientation at the whole-body COM.
RigidTransform com_frame(const Skeleton& skeleton, const FullBodyPose& x);
/// Foot frame from the attached contact points: yaw of the foot link, mean contact position.
RigidTransform sole_frame(const Skeleton& skeleton, const Kinematics& kin, int foot);

/// One gait cycle of full-body poses on the phase grid psi_i = 2 pi i / N.
struct FullBodyMotion {
  double cycle_duration = 1.0;
  std::vector<FullBodyPose> poses;
  std::vector<VecX> velocities;  // generalized velocities at the knots
  RigidTransform cycle_offset;
  std::string name;

  int size() const { return static_cast<int>(poses.size()); }
  FullBodyPose pose(double psi) const;
  VecX velocity(double psi) const;
  /// Pose at knot i of any cycle: i may be negative or beyond N.
  FullBodyPose knot(int i) const;
};

/// Procedural full-body gait whose feet follow the SRB reference (leg IK) with
/// swinging arms and a twisting waist.
FullBodyMotion synth_fullbody_reference(const Skeleton& skeleton, const ReferenceSRBMotion& ref);
/// One cycle of knot poses; velocities by central differences across the cycle seam.
FullBodyMotion motion_from_poses(std::vector<FullBodyPose> poses, double cycle_duration,
                                 const RigidTransform& cycle_offset, std::string name = "");

/// SRB-level quantities of one frame.
struct SRBFrame {
  double psi = 0.0;
  RigidTransform T;
  Vec6 velocity = Vec6::Zero();  // global angular, linear
  std::array<RigidTransform, kNumFeet> feet{};
  std::array<bool, kNumFeet> contact{};
};

/// N + 1 frames at psi_i = 2 pi i / N, the last one closing the cycle.
using SRBCycle = std::vector<SRBFrame>;

struct BaselineMotion {
  std::vector<SRBCycle> cycles;
};

SRBFrame srb_frame(const SRBState& state);

/// Resamples a simulated trajectory at the knot phases of every complete cycle.
/// Throws InvalidInput when no cycle is complete.
BaselineMotion collect_cycles(const std::vector<SRBState>& trajectory, int knots);

/// SRB motion read off a full-body motion: COM frame, centroidal velocity, sole frames.
SRBCycle srb_cycle_from_fullbody(const Skeleton& skeleton, const FullBodyMotion& motion);

/// Rotation about the vertical and horizontal translation of one cycle.
struct Alignment {
  double yaw = 0.0;
  Vec3 translation = Vec3::Zero();  // y component is always 0
  RigidTransform transform() const;
};

/// Maps the cycle's horizontal COM start and end points onto the reference's.
/// For cycles that barely move, the yaw is the mean heading difference instead.
Alignment align_cycle(const SRBCycle& cycle, const ReferenceSRBMotion& ref);
SRBCycle apply_alignment(const SRBCycle& cycle, const Alignment& alignment);
BaselineMotion align_baseline(const BaselineMotion& simulated, const ReferenceSRBMotion& ref);

/// Phase-indexed corrections between a baseline SRB motion and a full-body reference.
struct DeltaTables {
  int cycles = 0;
  std::vector<Twist> com;  // COM-frame twist
  std::vector<std::array<std::array<Vec3, kPointsPerFoot>, kNumFeet>> contacts;  // foot frame
  std::vector<Vec6> velocity;  // forward-facing frame

  int size() const { return static_cast<int>(com.size()); }
  void validate() const;
};

struct DeltaSample {
  Twist com;
  std::array<std::array<Vec3, kPointsPerFoot>, kNumFeet> contacts{};
  Vec6 velocity = Vec6::Zero();
};

/// Linear interpolation between knots.
DeltaSample sample_deltas(const DeltaTables& deltas, double psi);

DeltaTables compute_deltas(const BaselineMotion& baseline, const Skeleton& skeleton, const FullBodyMotion& reference);

void save_deltas(const DeltaTables& deltas, const std::string& path);
DeltaTables load_deltas(const std::string& path);
std::string deltas_json(const DeltaTables& deltas);
DeltaTables parse_deltas(const std::string& json_text);

struct MMIKWeights {
  double w_contact = 1e5;  // about 30 / dt^2, above the velocity terms' implicit 1 / dt^2
  double w_g = 1.0;
  double w_m = 1.0;
  double w_p = 10.0;
  double w_v = 0.1;
  double w_r = 0.01;
  double push_gain = 0.002;  // (m/s) per newton of external force
};

struct MMIKToggles {
  bool com_delta = true;
  bool velocity_delta = true;
};

struct PushTarget {
  Vec3 direction = Vec3::Zero();  // unit, global
  double threshold = 0.0;         // m/s
};

/// Everything one MMIK frame needs; A = I_f^-1 J_m is evaluated at the desired pose.
struct MMIKTargets {
  std::vector<Vec3> contacts;  // one per skeleton attachment
  FullBodyPose x_bar;
  VecX xdot_bar;
  Vec6 velocity = Vec6::Zero();
  MatX A;
  std::optional<FullBodyPose> x_prev;  // velocity terms are skipped without it
  double dt = 1.0 / 60.0;
  std::optional<PushTarget> push;
};

/// Desired pose, contact targets and velocity target from one simulated SRB frame.
MMIKTargets build_mmik_targets(const Skeleton& skeleton, const SRBFrame& frame, double phase_scale,
                               const DeltaTables& deltas, const FullBodyMotion& reference, const MMIKToggles& toggles,
                               const MMIKWeights& weights, const std::optional<ExternalForce>& ext);

/// ||max(v, 0)||^2, with its gradient 2 max(v, 0).
double one_sided_norm(const Eigen::Ref<const VecX>& v, VecX* grad = nullptr);

/// Cost at x; grad is taken with respect to the left perturbation of retract().
double mmik_cost(const Skeleton& skeleton, const MMIKTargets& targets, const MMIKWeights& weights,
                 const FullBodyPose& x, VecX* grad = nullptr);

struct MMIKOptions {
  int max_iterations = 100;
  double grad_tol = 1e-8;
  bool fix_base = false;
};

struct MMIKResult {
  FullBodyPose pose;
  double cost = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  bool precision_limited = false;  // stopped because the cost stopped changing in floating point
  double contact_residual = 0.0;   // largest contact-point distance, m
  double momentum_residual = 0.0;  // |I_f^-1 J_m xdot - v| at the solution
  std::vector<double> cost_history;
};

/// Damped Gauss-Newton with backtracking line search.
MMIKResult mmik_solve(const Skeleton& skeleton, const FullBodyPose& x_init, const MMIKTargets& targets,
                      const MMIKWeights& weights, const MMIKOptions& options = {});

struct ReconstructionFrame {
  double time = 0.0;
  FullBodyPose pose;
  std::vector<double> contact_errors;  // per attachment, m
  double momentum_residual = 0.0;      // against the velocity-delta-corrected target
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct ReconstructionReport {
  std::vector<ReconstructionFrame> frames;
  double contact_p95 = 0.0;
  double contact_max = 0.0;
  double momentum_mean = 0.0;
  int nonconverged = 0;
};

/// Per-frame MMIK along a simulated trajectory; forces[i] is the external force of step i.
ReconstructionReport reconstruct(const Skeleton& skeleton, const std::vector<SRBState>& trajectory,
                                 const std::vector<std::optional<ExternalForce>>& forces,
                                 const ReferenceSRBMotion& srb_ref, const FullBodyMotion& reference,
                                 const DeltaTables& deltas, const MMIKWeights& weights, const MMIKToggles& toggles,
                                 const MMIKOptions& options = {});

/// frame, time, base position, base quaternion (w, x, y, z), joint coordinates.
void write_pose_header(std::ostream& out, const Skeleton& skeleton);
void write_pose_row(std::ostream& out, int frame, double time, const FullBodyPose& pose);
std::vector<FullBodyPose> load_pose_csv(const std::string& path, const Skeleton& skeleton);

}  // namespace srblab
