#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "srblab/spatial.hpp"

namespace srblab {

enum Foot : int { kLeft = 0, kRight = 1 };
constexpr int kNumFeet = 2;
constexpr int kPointsPerFoot = 2;  // heel, toe
constexpr int kNumContactPoints = kNumFeet * kPointsPerFoot;

struct SRBCharacterConfig {
  double mass = 60.0;
  Vec3 box_dims = Vec3(0.35, 1.2, 0.2);  // x (lateral), y (vertical), z (forward), meters
  std::optional<Mat3> inertia;           // overrides the box formula when set
  Vec3 heel = Vec3(0.0, 0.0, -0.1);      // foot frame, z forward
  Vec3 toe = Vec3(0.0, 0.0, 0.1);
};

struct SRBCharacter {
  double mass = 60.0;
  Mat3 inertia = Mat3::Identity();
  std::array<Vec3, kPointsPerFoot> contact_offsets{};  // heel, toe in the foot frame

  /// Spatial inertia in the body frame, (angular, linear) ordering.
  Mat6 spatial_inertia() const;
};

SRBCharacter build_srb_character(const SRBCharacterConfig& config = {});
Mat3 box_inertia(double mass, const Vec3& dims);

/// Foot frame from a horizontal position and a yaw angle about +y.
RigidTransform foot_frame(double yaw, const Vec3& position);

struct RefFootKnot {
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;  // relative to the heading of the COM frame at the same knot
  std::array<Vec3, kPointsPerFoot> contacts{};
};

struct RefKnot {
  double psi = 0.0;
  RigidTransform T;
  Twist qdot;  // body frame
  std::array<RefFootKnot, kNumFeet> feet{};
};

/// Half-open [touch_down, lift_off) in phase; wraps through 2 pi when lift_off < touch_down.
struct ContactInterval {
  double touch_down = 0.0;
  double lift_off = 0.0;
  bool contains(double psi) const;
};

struct RefSample {
  RigidTransform T;
  Twist qdot;
  std::array<bool, kNumFeet> contact{};
  std::array<Vec3, kNumFeet> foot_position{};
  std::array<Mat3, kNumFeet> foot_rotation{};
  std::array<double, kNumFeet> foot_yaw{};  // global yaw angle
  std::array<std::array<Vec3, kPointsPerFoot>, kNumFeet> contacts{};
  double height() const { return T.p().y(); }
};

/// One gait cycle of a reference SRB motion sampled uniformly in phase.
/// Knot i sits at psi = 2 pi i / N. cycle_offset maps cycle c to cycle c+1 in
/// global coordinates, so the motion continues past 2 pi as D^c * (cycle 0).
struct ReferenceSRBMotion {
  double cycle_duration = 1.0;
  double sample_rate = 60.0;
  std::vector<RefKnot> samples;
  std::array<std::vector<ContactInterval>, kNumFeet> contact_intervals;
  double average_speed = 0.0;
  RigidTransform cycle_offset;
  std::string name;

  double phase_rate() const;
  int size() const { return static_cast<int>(samples.size()); }
  bool in_contact(int foot, double psi) const;
  /// Throws InvalidInput describing the first violated invariant.
  void validate() const;
};

RefSample sample_reference(const ReferenceSRBMotion& motion, double psi);
/// Sample of the cycle placed at `offset` (D^c for cycle c).
RefSample sample_reference(const ReferenceSRBMotion& motion, double psi, const RigidTransform& offset);

/// o = (R^y)^-1 (f - projY(p)) of the reference at psi.
Vec3 foot_offset(const ReferenceSRBMotion& motion, double psi, int foot);
Vec3 foot_offset(const RefSample& sample, int foot);

enum class GaitKind { InPlaceStep, Walk, Run };

struct SynthParams {
  GaitKind kind = GaitKind::InPlaceStep;
  double speed = 0.0;          // m/s along +z
  double cycle_duration = 1.0; // s, two steps
  double duty_factor = -1.0;   // per foot stance fraction; negative picks the gait default
  double com_height = 0.95;
  double bob_amplitude = 0.02;
  double sway_amplitude = -1.0;  // negative: pendulum-consistent sway for the step width
  double step_width = 0.2;     // lateral foot separation
  double sample_rate = 60.0;
  SRBCharacterConfig character;
};

ReferenceSRBMotion synth_reference(const SynthParams& params);
SynthParams default_synth_params(GaitKind kind);
GaitKind parse_gait_kind(const std::string& name);
const char* to_string(GaitKind kind);

ReferenceSRBMotion load_reference_motion(const std::string& path);
void save_reference_motion(const ReferenceSRBMotion& motion, const std::string& path);

}  // namespace srblab
