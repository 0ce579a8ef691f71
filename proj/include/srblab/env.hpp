#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "srblab/sim.hpp"

namespace srblab {

struct RewardWeights {
  double w_s = 5.0;
  double w_m = 0.1;
  double w_p = 5.0;
  double w_e = 0.4;
  double w_p1 = 1.0;
  double w_p2 = 5.0;
  double w_p3 = 5.0;
  double w_p4 = 5.0;
  double alive = 1.0;
};

/// Symmetric per-dimension action bounds.
struct ActionBounds {
  double landing = 0.5;   // m, per axis
  double linear = 2.0;    // m/s
  double angular = 3.0;   // rad/s

  VecX upper() const;
  VecX clamp(const Eigen::Ref<const VecX>& a) const;
};

/// Force held constant over [start, start + duration), expressed in the heading
/// frame captured at onset (x lateral, z forward), applied at the COM.
struct PushEvent {
  double start = 0.0;
  double duration = 0.2;
  Vec3 force = Vec3::Zero();
};

struct FacingCommand {
  double time = 0.0;
  double heading = 0.0;
};

/// Piecewise-constant desired heading over time.
struct FacingCommandStream {
  std::vector<FacingCommand> commands;

  double heading_at(double time) const;
  void validate() const;
  static FacingCommandStream load_csv(const std::string& path);
};

struct InteractiveConfig {
  bool enabled = false;
  double w_c = 1.0;
  FacingCommandStream commands;
};

struct EnvConfig {
  std::string reference = "synth:in_place_step";  // file path or synth:<gait>
  SimConfig sim;
  RewardWeights weights;
  ActionBounds bounds;
  Terrain terrain;
  double episode_cap = 3.0;  // s
  std::vector<PushEvent> pushes;
  InteractiveConfig interactive;
};

/// Parses the environment section of a JSON config; errors name the field path.
EnvConfig parse_env_config(const std::string& json_text, const std::string& base_dir = ".");
EnvConfig load_env_config(const std::string& path);
/// "flat", a {"type": "flat" | "slope", ...} object, or a heightfield file path string.
Terrain parse_terrain_config(const std::string& json_text, const std::string& base_dir = ".");
/// Loads a reference from a file path or synthesizes one from "synth:<gait>".
ReferenceSRBMotion load_reference(const std::string& spec);

constexpr int kObsDim = 21;
constexpr int kInteractiveObsDim = 22;

/// Height, projected-frame orientation and velocity, per-foot planar offsets and
/// yaw, and phase. Appends delta_y when given.
VecX observe(const SRBState& state, const Terrain& terrain, std::optional<double> delta_y = std::nullopt);

struct RewardTerms {
  double posture = 0.0;
  double end_effector = 0.0;
  double reward = 0.0;
};

/// Consecutive simulated states against the matching reference samples.
double posture_reward(const SRBState& s0, const SRBState& s1, const RefSample& r0, const RefSample& r1,
                      const Terrain& terrain, const RewardWeights& w);
double end_effector_reward(const SRBState& s1, const RefSample& r1, const SRBCharacter& character,
                           const Terrain& terrain);
double tracking_reward(double posture, double end_effector, const RewardWeights& w);
RewardTerms compute_reward(const SRBState& s0, const SRBState& s1, const RefSample& r0, const RefSample& r1,
                           const SRBCharacter& character, const Terrain& terrain, const RewardWeights& w);
double interactive_reward(double r, double delta_y, double w_c);

enum class TerminationReason { None, HeightLow, HeightHigh, Tilt, TimeLimit };
const char* to_string(TerminationReason r);

/// Height y is measured above the terrain; y_ref is the reference COM height.
TerminationReason check_termination(double y, double y_ref, const Mat3& R, double episode_time, double cap);
TerminationReason check_termination(const SRBState& state, const RefSample& ref, const Terrain& terrain, double cap);

struct EnvStep {
  VecX obs;
  double reward = 0.0;
  RewardTerms terms;
  bool terminated = false;  // failure
  bool truncated = false;   // time limit
  TerminationReason reason = TerminationReason::None;
  StepInfo info;
};

class Env {
 public:
  Env(EnvConfig config, std::shared_ptr<const ReferenceSRBMotion> ref, std::uint64_t seed = 0);

  int obs_dim() const { return config_.interactive.enabled ? kInteractiveObsDim : kObsDim; }
  int act_dim() const { return Action::kDim; }

  /// Reference-state initialization at a uniformly random phase.
  VecX reset();
  VecX reset_at(double psi);
  EnvStep step(const Eigen::Ref<const VecX>& action);
  /// Additional force for the next step only (box contact).
  void set_extra_force(std::optional<ExternalForce> f) { extra_force_ = f; }

  VecX observation() const;
  double facing_error() const;
  const SRBState& state() const { return state_; }
  SRBState& mutable_state() { return state_; }
  RefSample reference_sample() const;
  const ReferenceSRBMotion& reference() const { return *ref_; }
  const EnvConfig& config() const { return config_; }
  EnvConfig& mutable_config() { return config_; }
  Simulator& simulator() { return sim_; }
  double episode_time() const { return episode_time_; }
  std::optional<ExternalForce> active_push() const;

 private:
  EnvConfig config_;
  std::shared_ptr<const ReferenceSRBMotion> ref_;
  Simulator sim_;
  std::mt19937_64 rng_;
  SRBState state_;
  double episode_time_ = 0.0;
  std::vector<Mat3> push_frames_;
  std::optional<ExternalForce> extra_force_;
};

}  // namespace srblab
