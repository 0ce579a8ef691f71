#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "srblab/env.hpp"
#include "srblab/fullbody.hpp"
#include "srblab/ppo.hpp"

namespace srblab {

/// A frozen policy together with the reference motion and delta tables it tracks.
struct Controller {
  std::string name;
  std::shared_ptr<const PolicyCheckpoint> policy;
  std::shared_ptr<const ReferenceSRBMotion> reference;
  std::optional<DeltaTables> deltas;
  EnvConfig env;  // training environment: simulator settings, action bounds

  int obs_dim() const { return policy ? policy->obs_dim() : 0; }
  void validate() const;
};

/// Reference taken from the checkpoint's environment section unless given.
Controller make_controller(PolicyCheckpoint checkpoint, std::optional<ReferenceSRBMotion> reference = {},
                           std::optional<DeltaTables> deltas = {}, std::string name = "");
/// A checkpoint file, or a descriptor {"checkpoint", "reference"?, "deltas"?} with paths
/// relative to the descriptor.
Controller load_controller(const std::string& path);

/// Signed seconds to the next touch-down and lift-off: positive while upcoming,
/// negative (time since) once the event has happened within the current stance or swing.
struct ContactDistance {
  double touch_down = 0.0;
  double lift_off = 0.0;
};

ContactDistance signed_contact_distance(const ReferenceSRBMotion& ref, double psi, int foot, double phase_rate);
ContactDistance mix_distances(const ContactDistance& a, const ContactDistance& b, double t);
/// In contact when the most recent event is a touch-down.
bool contact_from_distance(const ContactDistance& d);

/// Linear mix with slerped orientations; returns a or b unchanged at t = 0 or 1.
/// Contact flags are taken from the nearer end point.
RefSample blend_samples(const RefSample& a, const RefSample& b, double t);
DeltaSample blend_deltas(const DeltaSample& a, const DeltaSample& b, double t);

/// Desired minus current heading, wrapped to (-pi, pi]; positive turns left.
double facing_error(const SRBState& state, const FacingCommandStream& commands, double time);

/// Cycle offset that places `ref` at psi on the heading frame of `current`.
RigidTransform anchor_offset(const RefSample& current, const ReferenceSRBMotion& ref, double psi);

struct Compatibility {
  bool contacts_match = false;
  double distance = 0.0;  // norm of the log of the relative COM frames
  bool ok = false;
};
constexpr double kCompatibilityDistance = 0.3;

Compatibility check_compatibility(const ReferenceSRBMotion& a, const ReferenceSRBMotion& b, double psi);
/// Knot phases of `a` at which a switch to `b` is allowed.
std::vector<double> compatible_phases(const ReferenceSRBMotion& a, const ReferenceSRBMotion& b);

/// Reference and delta discrepancy captured at a switch, faded out exponentially.
struct Stitch {
  double start_time = 0.0;
  double time_constant = 0.5;
  Twist com;    // body frame: T_old = T_new exp(com)
  Twist velocity;
  std::array<Vec3, kNumFeet> foot_position{};
  std::array<double, kNumFeet> foot_yaw{};
  std::optional<DeltaSample> deltas;

  double weight(double time) const;
  bool is_zero() const;
  RefSample apply(const RefSample& sample, double time) const;
  DeltaSample apply(const DeltaSample& sample, double time) const;
};

Stitch capture_stitch(const RefSample& from, const RefSample& to, const std::optional<DeltaSample>& from_deltas,
                      const std::optional<DeltaSample>& to_deltas, double time, double time_constant = 0.5);

/// Phase bookkeeping of one controller's reference.
struct PhaseTrack {
  RigidTransform offset;
  int cycle = 0;
  double stride_dv = 0.0;
  double rate = 0.0;
};

struct ControlStep {
  VecX action;                           // applied (clamped and mixed)
  RefSample reference;                   // at the new phase
  std::optional<DeltaSample> deltas;     // when every active controller has tables
  double phase_rate = 0.0;
  double weight = 0.0;                   // 0 = controller A, 1 = controller B
  std::array<ContactDistance, kNumFeet> distance{};
  std::array<bool, kNumFeet> touch_down{};
  std::array<bool, kNumFeet> lift_off{};
  StepInfo info;
  TerminationReason reason = TerminationReason::None;
  bool terminated = false;
  bool switched = false;                 // the switch took effect after this step
};

struct SessionOptions {
  Terrain terrain;
  std::optional<FacingCommandStream> facing;
  bool stochastic = false;  // sample actions instead of using the mean
  std::uint64_t seed = 0;
  double stitch_time_constant = 0.5;
};

/// One simulated character driven by controller A, optionally B. Each policy sees the
/// shared state against its own reference; the phase is shared.
class ControlSession {
 public:
  ControlSession(Controller a, std::optional<Controller> b, const SRBState& initial, SessionOptions options = {});

  const SRBState& state() const { return state_; }
  const Controller& controller(int i) const { return controllers_.at(i); }
  int num_controllers() const { return static_cast<int>(controllers_.size()); }
  const PhaseTrack& track(int i) const { return tracks_.at(i); }
  const std::optional<Stitch>& stitch() const { return stitch_; }
  const Simulator& simulator() const { return sim_; }
  const Terrain& terrain() const { return options_.terrain; }
  double weight() const { return weight_; }

  /// Interpolation weight for following steps; 0 runs A alone, 1 runs B alone.
  void set_weight(double t);
  /// Switches to B once the phase reaches psi. Throws when the phase is not compatible,
  /// listing the valid phases.
  void arm_switch(double psi);
  bool switched() const { return switched_; }
  std::optional<double> switch_time() const { return switch_time_; }

  ControlStep step(const std::optional<ExternalForce>& ext = std::nullopt);

  /// Reference sample and deltas of the current blend at the current phase.
  RefSample reference_sample() const;
  std::optional<DeltaSample> delta_sample() const;

 private:
  SRBState view(int i) const;
  RefSample sample(int i, double psi, const RigidTransform& offset) const;
  VecX policy_action(int i);
  void do_switch();

  std::vector<Controller> controllers_;
  std::vector<PhaseTrack> tracks_;
  SessionOptions options_;
  Simulator sim_;
  std::mt19937_64 rng_;
  SRBState state_;
  double weight_ = 0.0;
  std::optional<double> pending_switch_;
  bool switched_ = false;
  std::optional<double> switch_time_;
  std::optional<Stitch> stitch_;
};

/// Reference-state initialization on the blend of A and B at psi.
SRBState blended_reset(const Controller& a, const Controller* b, double t, double psi, const Terrain& terrain);

struct RunSummary {
  double duration = 0.0;  // simulated seconds
  bool fell = false;
  TerminationReason reason = TerminationReason::None;
  double speed = 0.0;     // mean horizontal COM speed, m/s
  double distance = 0.0;  // horizontal COM displacement, m
  std::optional<double> switch_time;
};

/// Fixed-ratio interpolated controller run from the blended reference state.
RunSummary run_interpolated(const Controller& a, const Controller& b, double t, double duration, double psi0,
                            const Terrain& terrain = {}, std::vector<TrajectoryRow>* trajectory = nullptr);

enum class TransitionMode { Switch, Blend, Interpolate };
const char* to_string(TransitionMode m);

/// Transition experiment. t_or_schedule holds, per mode: switch, the transition phase;
/// blend, the ramp duration or a [[time, t], ...] schedule; interpolate, one or more
/// fixed weights.
struct TransitionScript {
  TransitionMode mode = TransitionMode::Blend;
  std::vector<double> values{1.0};
  std::vector<std::pair<double, double>> schedule;
  std::vector<std::string> controllers;
  double transition_time = 1.0;
  double duration = 20.0;        // seconds after the transition (or whole run for interpolate)
  int trials = 1;
  std::string facing;            // optional CSV of (time_s, heading_rad)
  double start_phase = -1.0;     // negative: random per trial

  void validate() const;
  /// Blend weight at a time for the blend mode.
  double blend_weight(double time) const;
};

TransitionScript parse_transition_script(const std::string& json_text, const std::string& base_dir = ".");
TransitionScript load_transition_script(const std::string& path);

struct TransitionTrial {
  int index = 0;
  double t = 0.0;  // interpolation weight for interpolate mode
  double start_phase = 0.0;
  RunSummary summary;
  bool success = false;  // no fall within the duration after the transition
};

struct TransitionReport {
  TransitionMode mode = TransitionMode::Blend;
  std::vector<TransitionTrial> trials;
  int successes = 0;
};

TransitionReport run_transition(const TransitionScript& script, const std::vector<Controller>& controllers,
                                std::uint64_t seed, int threads = 1, std::vector<TrajectoryRow>* first_trajectory = nullptr);

}  // namespace srblab
