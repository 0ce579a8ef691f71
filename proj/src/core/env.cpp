#include "srblab/env.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json_util.hpp"
#include "srblab/error.hpp"

namespace srblab {

using detail::json;

VecX ActionBounds::upper() const {
  VecX u(Action::kDim);
  u << landing, landing, landing, landing, angular, angular, angular, linear, linear, linear;
  return u;
}

VecX ActionBounds::clamp(const Eigen::Ref<const VecX>& a) const {
  require(a.size() == Action::kDim, "env: action must have 10 entries");
  const VecX u = upper();
  return a.cwiseMax(-u).cwiseMin(u);
}

double FacingCommandStream::heading_at(double time) const {
  require(!commands.empty(), "facing command stream is empty");
  double h = commands.front().heading;
  for (const auto& c : commands) {
    if (c.time > time) break;
    h = c.heading;
  }
  return h;
}

void FacingCommandStream::validate() const {
  require(!commands.empty(), "facing command stream is empty");
  for (std::size_t i = 1; i < commands.size(); ++i)
    require(commands[i].time >= commands[i - 1].time, "facing command stream: timestamps must be monotone");
}

FacingCommandStream FacingCommandStream::load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open facing command stream '" + path + "'");
  FacingCommandStream s;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    FacingCommand c;
    if (!(ls >> c.time >> c.heading)) {
      if (n == 1) continue;  // header
      fail(ErrorCode::Parse, path + ":" + std::to_string(n) + ": expected time_s,heading_rad");
    }
    s.commands.push_back(c);
  }
  s.validate();
  return s;
}

ReferenceSRBMotion load_reference(const std::string& spec) {
  const std::string prefix = "synth:";
  if (spec.rfind(prefix, 0) == 0) {
    GaitKind kind;
    try {
      kind = parse_gait_kind(spec.substr(prefix.size()));
    } catch (const Error& e) {
      fail(ErrorCode::Parse, "config: reference '" + spec + "': " + e.what());
    }
    return synth_reference(default_synth_params(kind));
  }
  if (!std::filesystem::exists(spec)) fail(ErrorCode::Io, "reference motion file not found: '" + spec + "'");
  return load_reference_motion(spec);
}

namespace {

SimConfig parse_sim(const json& j, SimConfig c) {
  const std::string p = "sim.";
  detail::check_keys(j, {"dt", "gravity", "mu", "cone_edges", "w_lambda", "pd_a", "pd_b", "lqr_alpha", "stride_beta",
                         "stride_mode", "stride_adjustment", "contact_timing_adjustment", "late_threshold",
                         "early_threshold", "timing_window"},
                     p);
  c.dt = detail::get_number(j, "dt", p, c.dt);
  c.gravity = detail::get_number(j, "gravity", p, c.gravity);
  c.mu = detail::get_number(j, "mu", p, c.mu);
  c.cone_edges = detail::get_int(j, "cone_edges", p, c.cone_edges);
  c.w_lambda = detail::get_number(j, "w_lambda", p, c.w_lambda);
  c.pd_a = detail::get_number(j, "pd_a", p, c.pd_a);
  c.pd_b = detail::get_number(j, "pd_b", p, c.pd_b);
  c.lqr_alpha = detail::get_number(j, "lqr_alpha", p, c.lqr_alpha);
  c.stride_beta = detail::get_number(j, "stride_beta", p, c.stride_beta);
  const std::string mode = detail::get_string(j, "stride_mode", p, "relative");
  if (mode == "relative")
    c.stride_mode = StrideNormalization::Relative;
  else if (mode == "literal")
    c.stride_mode = StrideNormalization::Literal;
  else
    fail(ErrorCode::Parse, "config: field 'sim.stride_mode' must be 'relative' or 'literal'");
  c.stride_adjustment = detail::get_bool(j, "stride_adjustment", p, c.stride_adjustment);
  c.contact_timing_adjustment = detail::get_bool(j, "contact_timing_adjustment", p, c.contact_timing_adjustment);
  c.late_threshold = detail::get_number(j, "late_threshold", p, c.late_threshold);
  c.early_threshold = detail::get_number(j, "early_threshold", p, c.early_threshold);
  c.timing_window = detail::get_number(j, "timing_window", p, c.timing_window);
  if (c.dt <= 0.0 || c.mu <= 0.0 || c.w_lambda <= 0.0 || c.cone_edges < 3)
    fail(ErrorCode::Parse, "config: 'sim' has a non-positive dt, mu or w_lambda, or fewer than 3 cone edges");
  return c;
}

Terrain parse_terrain(const json& j, const std::string& base) {
  if (j.is_string()) {
    if (j.get<std::string>() == "flat") return Terrain();
    const std::string path = detail::join_path(base, j.get<std::string>());
    if (!std::filesystem::exists(path)) fail(ErrorCode::Io, "terrain file not found: '" + path + "'");
    return Terrain::load(path);
  }
  const std::string p = "terrain.";
  detail::check_keys(j, {"type", "angle_deg", "x", "z", "spacing"}, p);
  const std::string type = detail::get_string(j, "type", p, "flat");
  if (type == "flat") return Terrain();
  if (type != "slope") fail(ErrorCode::Parse, "config: field 'terrain.type' must be 'flat' or 'slope'");
  auto range = [&](const char* key, double a, double b) {
    if (!j.contains(key)) return std::pair(a, b);
    const json& v = j.at(key);
    if (!v.is_array() || v.size() != 2) fail(ErrorCode::Parse, std::string("config: field 'terrain.") + key + "' must hold 2 numbers");
    return std::pair(v[0].get<double>(), v[1].get<double>());
  };
  const auto [x0, x1] = range("x", -5.0, 5.0);
  const auto [z0, z1] = range("z", -5.0, 40.0);
  const double angle = detail::get_number(j, "angle_deg", p, 5.0) * M_PI / 180.0;
  return Terrain::slope(angle, x0, x1, z0, z1, detail::get_number(j, "spacing", p, 0.25));
}

}  // namespace

Terrain parse_terrain_config(const std::string& text, const std::string& base_dir) {
  return parse_terrain(detail::parse_json(text, "terrain config"), base_dir);
}

EnvConfig parse_env_config(const std::string& text, const std::string& base_dir) {
  const json j = detail::parse_json(text, "env config");
  detail::check_keys(j, {"reference", "sim", "weights", "action_bounds", "terrain", "episode_cap", "pushes", "interactive"},
                     "");
  EnvConfig c;
  std::string ref = detail::get_string(j, "reference", "", c.reference);
  c.reference = ref.rfind("synth:", 0) == 0 ? ref : detail::join_path(base_dir, ref);
  if (j.contains("sim")) c.sim = parse_sim(j.at("sim"), c.sim);
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    const std::string p = "weights.";
    detail::check_keys(w, {"w_s", "w_m", "w_p", "w_e", "w_p1", "w_p2", "w_p3", "w_p4", "alive"}, p);
    RewardWeights& r = c.weights;
    r.w_s = detail::get_number(w, "w_s", p, r.w_s);
    r.w_m = detail::get_number(w, "w_m", p, r.w_m);
    r.w_p = detail::get_number(w, "w_p", p, r.w_p);
    r.w_e = detail::get_number(w, "w_e", p, r.w_e);
    r.w_p1 = detail::get_number(w, "w_p1", p, r.w_p1);
    r.w_p2 = detail::get_number(w, "w_p2", p, r.w_p2);
    r.w_p3 = detail::get_number(w, "w_p3", p, r.w_p3);
    r.w_p4 = detail::get_number(w, "w_p4", p, r.w_p4);
    r.alive = detail::get_number(w, "alive", p, r.alive);
    for (double v : {r.w_s, r.w_m, r.w_p, r.w_e, r.w_p1, r.w_p2, r.w_p3, r.w_p4, r.alive})
      if (v < 0.0) fail(ErrorCode::Parse, "config: reward weights must be nonnegative");
  }
  if (j.contains("action_bounds")) {
    const json& b = j.at("action_bounds");
    const std::string p = "action_bounds.";
    detail::check_keys(b, {"landing", "linear", "angular"}, p);
    c.bounds.landing = detail::get_number(b, "landing", p, c.bounds.landing);
    c.bounds.linear = detail::get_number(b, "linear", p, c.bounds.linear);
    c.bounds.angular = detail::get_number(b, "angular", p, c.bounds.angular);
    if (c.bounds.landing <= 0 || c.bounds.linear <= 0 || c.bounds.angular <= 0)
      fail(ErrorCode::Parse, "config: action bounds must be positive");
  }
  if (j.contains("terrain")) c.terrain = parse_terrain(j.at("terrain"), base_dir);
  c.episode_cap = detail::get_number(j, "episode_cap", "", c.episode_cap);
  if (c.episode_cap <= 0.0) fail(ErrorCode::Parse, "config: field 'episode_cap' must be positive");
  if (j.contains("pushes")) {
    const json& ps = j.at("pushes");
    if (!ps.is_array()) fail(ErrorCode::Parse, "config: field 'pushes' must be an array");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const std::string p = "pushes[" + std::to_string(i) + "].";
      detail::check_keys(ps[i], {"start", "duration", "force"}, p);
      PushEvent e;
      e.start = detail::get_number(ps[i], "start", p, e.start);
      e.duration = detail::get_number(ps[i], "duration", p, e.duration);
      e.force = detail::get_vec3(ps[i], "force", p, e.force);
      c.pushes.push_back(e);
    }
  }
  if (j.contains("interactive")) {
    const json& it = j.at("interactive");
    const std::string p = "interactive.";
    detail::check_keys(it, {"enabled", "w_c", "commands"}, p);
    c.interactive.enabled = detail::get_bool(it, "enabled", p, false);
    c.interactive.w_c = detail::get_number(it, "w_c", p, c.interactive.w_c);
    if (it.contains("commands")) {
      const json& cmd = it.at("commands");
      if (cmd.is_string()) {
        c.interactive.commands = FacingCommandStream::load_csv(detail::join_path(base_dir, cmd.get<std::string>()));
      } else if (cmd.is_array()) {
        for (const json& e : cmd) {
          if (!e.is_array() || e.size() != 2) fail(ErrorCode::Parse, "config: 'interactive.commands' entries must be [time, heading]");
          c.interactive.commands.commands.push_back({e[0].get<double>(), e[1].get<double>()});
        }
        c.interactive.commands.validate();
      } else {
        fail(ErrorCode::Parse, "config: field 'interactive.commands' must be a path or an array");
      }
    }
  }
  return c;
}

EnvConfig load_env_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_env_config(ss.str(), std::filesystem::path(path).parent_path().string());
}

VecX observe(const SRBState& s, const Terrain& terrain, std::optional<double> delta_y) {
  const RigidTransform P = projected_frame(s.T, terrain);
  const Mat3& Ry = P.R();
  const Mat3 Rl = Ry.transpose() * s.T.R();
  VecX o(delta_y ? kInteractiveObsDim : kObsDim);
  o[0] = s.T.p().y() - P.p().y();
  o.segment<4>(1) = quaternion_wxyz(Rl);
  o.segment<3>(5) = Rl * s.qdot.angular;
  o.segment<3>(8) = Rl * s.qdot.linear;
  const double heading = heading_of(s.T.R());
  for (int j = 0; j < kNumFeet; ++j) {
    const Vec3 f = Ry.transpose() * (s.feet[j].position - s.T.p());
    const double th = s.feet[j].yaw - heading;
    o.segment<4>(11 + 4 * j) << f.x(), f.z(), std::cos(th), std::sin(th);
  }
  o[19] = std::sin(s.psi);
  o[20] = std::cos(s.psi);
  if (delta_y) o[21] = *delta_y;
  return o;
}

namespace {

// Rotation of a frame expressed in the heading frame of the same character.
Mat3 local_rotation(const Mat3& R) { return yaw_only(R).transpose() * R; }

}  // namespace

double posture_reward(const SRBState& s0, const SRBState& s1, const RefSample& r0, const RefSample& r1,
                      const Terrain& terrain, const RewardWeights& w) {
  const Mat3 Ry = yaw_only(s0.T.R());
  const Mat3 Ryh = yaw_only(r0.T.R());
  const Vec3 dp = Ry.transpose() * (s1.T.p() - s0.T.p());
  const Vec3 dph = Ryh.transpose() * (r1.T.p() - r0.T.p());
  const Mat3 dR = Ry.transpose() * (s1.T.R() * s0.T.R().transpose()) * Ry;
  const Mat3 dRh = Ryh.transpose() * (r1.T.R() * r0.T.R().transpose()) * Ryh;
  const RigidTransform P = projected_frame(s1.T, terrain);
  const RigidTransform Ph = projected_frame(r1.T);
  const Vec3 p = P.inverse().apply(s1.T.p());
  const Vec3 ph = Ph.inverse().apply(r1.T.p());
  return w.w_p1 * (dp - dph).norm() + w.w_p2 * rot_distance(dR, dRh) + w.w_p3 * (p - ph).norm() +
         w.w_p4 * rot_distance(local_rotation(s1.T.R()), local_rotation(r1.T.R()));
}

double end_effector_reward(const SRBState& s1, const RefSample& r1, const SRBCharacter& character,
                           const Terrain& terrain) {
  const RigidTransform Pi = projected_frame(s1.T, terrain).inverse();
  const RigidTransform Phi = projected_frame(r1.T).inverse();
  double sum = 0.0;
  for (int j = 0; j < kNumFeet; ++j) {
    if (!r1.contact[j]) continue;
    const auto c = foot_contact_points(s1.feet[j], character, terrain);
    for (int k = 0; k < kPointsPerFoot; ++k) sum += (Pi.apply(c[k]) - Phi.apply(r1.contacts[j][k])).squaredNorm();
  }
  return sum;
}

double tracking_reward(double posture, double end_effector, const RewardWeights& w) {
  return w.w_s * w.alive - w.w_m * (w.w_p * posture + w.w_e * end_effector);
}

RewardTerms compute_reward(const SRBState& s0, const SRBState& s1, const RefSample& r0, const RefSample& r1,
                           const SRBCharacter& character, const Terrain& terrain, const RewardWeights& w) {
  RewardTerms t;
  t.posture = posture_reward(s0, s1, r0, r1, terrain, w);
  t.end_effector = end_effector_reward(s1, r1, character, terrain);
  t.reward = tracking_reward(t.posture, t.end_effector, w);
  return t;
}

double interactive_reward(double r, double delta_y, double w_c) {
  return std::exp(-r) * std::exp(-w_c * (std::cos(delta_y) - 1.0));
}

const char* to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::None: return "none";
    case TerminationReason::HeightLow: return "height_low";
    case TerminationReason::HeightHigh: return "height_high";
    case TerminationReason::Tilt: return "tilt";
    case TerminationReason::TimeLimit: return "time_limit";
  }
  return "unknown";
}

TerminationReason check_termination(double y, double y_ref, const Mat3& R, double episode_time, double cap) {
  if (y <= std::min(0.7 * y_ref, 0.2)) return TerminationReason::HeightLow;
  if (y >= 2.0) return TerminationReason::HeightHigh;
  const double tilt = std::acos(std::clamp(R(1, 1), -1.0, 1.0));
  if (tilt > 70.0 * M_PI / 180.0) return TerminationReason::Tilt;
  // Half a millisecond of slack absorbs accumulated step rounding at the cap.
  if (episode_time > cap - 5e-4) return TerminationReason::TimeLimit;
  return TerminationReason::None;
}

TerminationReason check_termination(const SRBState& s, const RefSample& ref, const Terrain& terrain, double cap) {
  const double y = s.T.p().y() - proj_y(s.T.p(), terrain).y();
  return check_termination(y, ref.height(), s.T.R(), s.time, cap);
}

Env::Env(EnvConfig config, std::shared_ptr<const ReferenceSRBMotion> ref, std::uint64_t seed)
    : config_(std::move(config)), ref_(std::move(ref)), sim_(config_.sim), rng_(seed) {
  require(ref_ != nullptr, "env: reference motion is required");
  if (config_.interactive.enabled) config_.interactive.commands.validate();
  reset_at(0.0);
}

VecX Env::reset() {
  std::uniform_real_distribution<double> u(0.0, 2.0 * M_PI);
  return reset_at(u(rng_));
}

VecX Env::reset_at(double psi) {
  state_ = sim_.reset(*ref_, psi, config_.terrain);
  episode_time_ = 0.0;
  push_frames_.assign(config_.pushes.size(), Mat3::Zero());
  extra_force_.reset();
  return observation();
}

RefSample Env::reference_sample() const { return sample_reference(*ref_, state_.psi, state_.ref_offset); }

double Env::facing_error() const {
  const auto& cmds = config_.interactive.commands;
  if (cmds.commands.empty()) return 0.0;
  return wrap_angle(cmds.heading_at(state_.time) - heading_of(state_.T.R()));
}

VecX Env::observation() const {
  if (config_.interactive.enabled) return observe(state_, config_.terrain, facing_error());
  return observe(state_, config_.terrain);
}

std::optional<ExternalForce> Env::active_push() const {
  for (std::size_t i = 0; i < config_.pushes.size(); ++i) {
    const PushEvent& e = config_.pushes[i];
    if (state_.time + 1e-9 < e.start || state_.time >= e.start + e.duration - 1e-9) continue;
    const Mat3 frame = push_frames_[i].isZero() ? yaw_only(state_.T.R()) : push_frames_[i];
    return ExternalForce{state_.T.p(), frame * e.force};
  }
  return std::nullopt;
}

EnvStep Env::step(const Eigen::Ref<const VecX>& a) {
  const Action action = Action::from_vector(config_.bounds.clamp(a));
  for (std::size_t i = 0; i < config_.pushes.size(); ++i) {
    const PushEvent& e = config_.pushes[i];
    if (push_frames_[i].isZero() && state_.time + 1e-9 >= e.start) push_frames_[i] = yaw_only(state_.T.R());
  }
  std::optional<ExternalForce> ext = extra_force_ ? extra_force_ : active_push();
  extra_force_.reset();

  EnvStep out;
  const RefSample r0 = reference_sample();
  const SRBState s0 = state_;
  state_ = sim_.step(s0, action, *ref_, ext, config_.terrain, &out.info);
  episode_time_ = state_.time;
  const RefSample r1 = reference_sample();
  out.terms = compute_reward(s0, state_, r0, r1, sim_.character(), config_.terrain, config_.weights);
  out.reward = out.terms.reward;
  if (config_.interactive.enabled) out.reward = interactive_reward(out.terms.reward, facing_error(), config_.interactive.w_c);
  out.reason = check_termination(state_, r1, config_.terrain, config_.episode_cap);
  out.truncated = out.reason == TerminationReason::TimeLimit;
  out.terminated = out.reason != TerminationReason::None && !out.truncated;
  out.obs = observation();
  return out;
}

}  // namespace srblab
