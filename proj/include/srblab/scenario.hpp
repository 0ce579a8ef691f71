#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "srblab/control.hpp"

namespace srblab {

struct RolloutOptions {
  double duration = 20.0;  // s
  double psi0 = 0.0;
  std::optional<Terrain> terrain;  // defaults to the controller's training terrain
  std::vector<PushEvent> pushes;
  std::optional<FacingCommandStream> facing;
  bool stochastic = false;
  std::uint64_t seed = 0;
  bool record = true;
};

struct RolloutResult {
  std::vector<TrajectoryRow> rows;  // includes the initial state
  std::vector<std::optional<ExternalForce>> forces;  // scripted push during the step into each row
  bool fell = false;
  TerminationReason reason = TerminationReason::None;
  double duration = 0.0;
  double distance = 0.0;  // horizontal COM displacement, m
  std::string note;       // e.g. left the terrain extent
};

/// Environment configured from the controller's training settings and the options.
Env make_rollout_env(const Controller& controller, const RolloutOptions& options);
RolloutResult rollout(const Controller& controller, const RolloutOptions& options);

/// Force direction in the heading frame at onset: a push from the left side points
/// toward -x, from the right toward +x, from behind toward +z.
enum class PushDirection { Left, Right, Behind };
PushDirection parse_push_direction(const std::string& name);
const char* to_string(PushDirection d);
Vec3 push_unit(PushDirection d);

struct PushSweep {
  int phases = 20;
  double force_min = 100.0;
  double force_max = 2000.0;
  double force_step = 50.0;
  int trials = 10;
  double push_duration = 0.2;
  double window = 20.0;  // seconds after the push without falling counts as success
  double warmup_min = 1.0;  // seconds before the push is armed, drawn per trial
  double warmup_max = 2.0;
  PushDirection direction = PushDirection::Behind;

  std::vector<double> forces() const;
  void validate() const;
};

struct PushGrid {
  std::vector<double> phases;
  std::vector<double> forces;
  int trials = 0;
  std::vector<std::vector<int>> successes;  // [phase][force]
  std::vector<int> zero_force;               // successes with no push, per phase

  double ratio(int phase, int force) const { return static_cast<double>(successes[phase][force]) / trials; }
  /// Largest force with every level up to it always balanced; 0 when the first level fails.
  double always_balanced(int phase) const;
  /// Smallest force from which every level always falls; negative when none does.
  double always_falls(int phase) const;
  /// Adjacent force levels where the success ratio rises, per phase.
  int inversions(int phase) const;
};

/// One trial: warm up, push once the phase reaches psi, then watch for a fall.
bool push_trial(const Controller& controller, double psi, double force, const PushSweep& sweep, std::uint64_t seed);
PushGrid push_experiment(const Controller& controller, const PushSweep& sweep, std::uint64_t seed, int threads = 1);

void write_push_grid_csv(std::ostream& out, const PushGrid& grid);
void write_push_summary_csv(std::ostream& out, const PushGrid& grid);

/// Box translating on flat ground, pushed through a penalty contact with a hand proxy
/// on the front of the character.
struct BoxConfig {
  double mass = 10.0;  // kg; 0 removes the box
  Vec3 half_extents = Vec3(0.3, 0.5, 0.3);
  double start_distance = 0.5;  // m from the COM to the near face, along the initial heading
  double friction = 0.5;
  double stiffness = 1e4;  // N/m
  double damping = 100.0;  // N s/m
  Vec3 hand = Vec3(0.0, -0.2, 0.25);  // hand proxy in the SRB body frame
  double gravity = 9.8;
};

struct BoxState {
  Vec3 position = Vec3::Zero();  // center
  Vec3 velocity = Vec3::Zero();
};

struct BoxContact {
  Vec3 force_on_character = Vec3::Zero();
  Vec3 point = Vec3::Zero();
  double penetration = 0.0;
};

/// Spring-damper force on the hand proxy from an axis-aligned box; zero when apart.
BoxContact box_contact(const BoxState& box, const BoxConfig& config, const Vec3& hand, const Vec3& hand_velocity);
/// Semi-implicit Euler with Coulomb ground friction; returns the friction impulse applied.
Vec3 integrate_box(BoxState& box, const BoxConfig& config, const Vec3& applied_force, double dt);

struct BoxLogRow {
  double time = 0.0;
  BoxState box;
  Vec3 contact_force = Vec3::Zero();    // on the character
  Vec3 friction_impulse = Vec3::Zero(); // on the box over the step
  Vec3 ground_force = Vec3::Zero();     // on the character
  Vec3 character_momentum = Vec3::Zero();
};

struct BoxResult {
  RolloutResult rollout;
  std::vector<BoxLogRow> log;
  double displacement = 0.0;  // horizontal box displacement, m
  /// Largest horizontal mismatch between the change in total linear momentum and the
  /// logged external impulses (ground reaction, gravity, box friction).
  double momentum_error = 0.0;
};

BoxResult box_experiment(const Controller& controller, const BoxConfig& box, const RolloutOptions& options);
void write_box_csv(std::ostream& out, const std::vector<BoxLogRow>& log);

struct TerrainResult {
  RolloutResult rollout;
  double distance = 0.0;  // traversed without termination
  bool truncated = false; // left the heightfield
};

TerrainResult terrain_experiment(const Controller& controller, const Terrain& terrain, const RolloutOptions& options);

}  // namespace srblab
