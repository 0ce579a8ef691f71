#pragma once

#include <array>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "srblab/qp.hpp"
#include "srblab/srb.hpp"
#include "srblab/terrain.hpp"

namespace srblab {

/// Closed-form LQR gains of a unit-mass 1D double integrator with
/// Q = diag(10^alpha, 0), R = 1.
struct LQRGains {
  double alpha = 8.0;
  Vec2 K = Vec2::Zero();
};
LQRGains lqr_gains(double alpha);

/// One 1D particle: value and its time derivative.
struct Particle {
  double value = 0.0;
  double velocity = 0.0;
};

/// Exact zero-order-hold transition of the closed loop over one step.
struct LQRFilter {
  LQRGains gains;
  double dt = 1.0 / 60.0;
  Eigen::Matrix2d phi = Eigen::Matrix2d::Identity();  // acts on (value - target, velocity)
};
LQRFilter make_lqr_filter(const LQRGains& gains, double dt);
Particle lqr_filter_step(const Particle& s, double target, const LQRFilter& filter);
Particle lqr_filter_step(const Particle& s, double target, const LQRGains& gains, double dt);

enum class FootMode { Swing, Contact };

struct FootState {
  FootMode mode = FootMode::Contact;
  Vec3 position = Vec3::Zero();  // on the terrain surface
  double yaw = 0.0;              // global yaw angle about +y
  Vec3 velocity = Vec3::Zero();
  double yaw_rate = 0.0;
  std::array<Particle, 3> particles{};  // x, z, theta (yaw relative to the SRB heading)

  Mat3 rotation() const { return rot_y(yaw); }
  RigidTransform frame() const { return foot_frame(yaw, position); }
};

/// Policy action: landing offsets per foot in the forward-facing frame (x, z) and
/// a relative body-frame COM velocity.
struct Action {
  std::array<Vec2, kNumFeet> landing{Vec2::Zero(), Vec2::Zero()};
  Twist velocity;

  static constexpr int kDim = 10;
  VecX vector() const;
  static Action from_vector(const Eigen::Ref<const VecX>& a);
};

struct ExternalForce {
  Vec3 point = Vec3::Zero();  // global application point
  Vec3 force = Vec3::Zero();  // global, newtons
};

enum class StrideNormalization { Relative, Literal };

struct SimConfig {
  double dt = 1.0 / 60.0;
  double gravity = 9.8;
  double mu = 0.8;
  int cone_edges = 4;
  double w_lambda = 0.001;
  double pd_a = 120.0;
  double pd_b = 35.0;
  double lqr_alpha = 8.0;
  double stride_beta = 0.4;
  StrideNormalization stride_mode = StrideNormalization::Relative;
  bool stride_adjustment = true;
  bool contact_timing_adjustment = true;
  double late_threshold = 0.05;
  double early_threshold = 0.1;
  double timing_window = 0.1 * 2.0 * M_PI;  // phase window around a scheduled touch-down
  SRBCharacterConfig character;
};

struct SRBState {
  RigidTransform T;
  Twist qdot;  // body frame
  std::array<FootState, kNumFeet> feet{};
  double psi = 0.0;
  double phase_rate = 0.0;
  double time = 0.0;
  RigidTransform ref_offset;  // cycle_offset^c for the current reference cycle
  int cycle = 0;
  double stride_dv = 0.0;     // |dp - dp_ref| / dt of the previous step
};

struct StepInfo {
  Vec6 qdd = Vec6::Zero();
  Vec6 qdd_desired = Vec6::Zero();
  VecX lambda;
  Vec3 contact_force = Vec3::Zero();  // total ground reaction force, global
  double normal_force = 0.0;
  int contact_points = 0;
  int qp_iterations = 0;
  double phase_multiplier = 1.0;
};

/// Reference targets for one step: the sample at the current phase drives the
/// COM PD; the sample at the advanced phase drives the foot schedule.
struct StepTargets {
  RefSample now;
  RefSample next;
  double psi_next = 0.0;
};

class Simulator {
 public:
  explicit Simulator(SimConfig config = {});

  const SimConfig& config() const { return config_; }
  const SRBCharacter& character() const { return character_; }
  const LQRFilter& lqr() const { return lqr_; }

  /// Reference-state initialization at phase psi.
  SRBState reset(const ReferenceSRBMotion& ref, double psi, const Terrain& terrain = {}) const;

  /// Full step: phase adjustment, QP dynamics, integration, foot update.
  SRBState step(const SRBState& state, const Action& action, const ReferenceSRBMotion& ref,
                const std::optional<ExternalForce>& ext, const Terrain& terrain, StepInfo* info = nullptr);

  /// Dynamics and feet for given targets; leaves psi, cycle and phase bookkeeping to the caller.
  SRBState advance(const SRBState& state, const Action& action, const StepTargets& targets,
                   const std::optional<ExternalForce>& ext, const Terrain& terrain, StepInfo* info = nullptr);

  /// Adjusted phase rate for the next step.
  double phase_rate(const SRBState& state, const ReferenceSRBMotion& ref, const Terrain& terrain,
                    double* multiplier = nullptr) const;

 private:
  SimConfig config_;
  SRBCharacter character_;
  LQRFilter lqr_;
  QPSolver solver_;
};

Twist desired_velocity(const Twist& ref_qdot, const Twist& a_v);
Vec6 desired_acceleration(const RigidTransform& T, const RigidTransform& T_hat, const Twist& qdot,
                          const Twist& qdot_desired, double a, double b);

/// projY(p + R^y (a_s + o)) for a foot in swing.
Vec3 desired_landing_position(const RigidTransform& T, const Vec2& a_s, const Vec3& offset, const Terrain& terrain);
Vec3 desired_landing_position(const SRBState& state, const Vec2& a_s, const RefSample& ref, int foot,
                              const Terrain& terrain);

/// Swing feet follow LQR-filtered targets; contact feet stay frozen; mode switches copy poses.
void update_foot_states(SRBState& state, const Action& action, const RefSample& ref_next, const Terrain& terrain,
                        const LQRFilter& filter);

/// dpsi_hat/dt (1 + beta dv / v_bar), or the literal (1 + beta dv v_bar) form.
double adjust_phase_rate_stride(double ref_rate, double dv, double average_speed, double beta,
                                StrideNormalization mode = StrideNormalization::Relative);
/// 0.5 for a late touch-down, 2.0 for an early one, 1.0 otherwise.
double adjust_phase_rate_contact(double y, double y_ref, const ReferenceSRBMotion& ref, double psi,
                                 const SimConfig& config);

/// Global contact points of a foot, each dropped onto the terrain.
std::array<Vec3, kPointsPerFoot> foot_contact_points(const FootState& foot, const SRBCharacter& character,
                                                     const Terrain& terrain);

/// Body-frame gyroscopic and gravity wrench b with M qdd + b = applied wrench.
Vec6 bias_wrench(const SRBCharacter& character, const RigidTransform& T, const Twist& qdot, double gravity);
/// 3 x 6 Jacobian of the global velocity of a body point (global position `point`).
Eigen::Matrix<double, 3, 6> point_jacobian(const RigidTransform& T, const Vec3& point);

/// Global spatial momentum (angular about the world origin, linear).
Vec6 spatial_momentum(const SRBCharacter& character, const SRBState& state);

struct TrajectoryRow {
  SRBState state;
  StepInfo info;
  double reward = 0.0;
  double posture = 0.0;
  double end_effector = 0.0;
};

void write_trajectory_header(std::ostream& out);
void write_trajectory_row(std::ostream& out, const TrajectoryRow& row);
/// Kinematic state per row (pose, velocity, feet, phase); solver fields are left default.
std::vector<SRBState> read_trajectory_csv(const std::string& path);

}  // namespace srblab
