#include "srblab/control.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "json_util.hpp"
#include "srblab/error.hpp"

namespace srblab {

using detail::json;

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

double forward_phase(double from, double to) { return wrap_phase(to - from); }

template <typename T>
T lerp(const T& a, const T& b, double t) {
  return (1.0 - t) * a + t * b;
}

std::string read_file(const std::string& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + what + " '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string phase_list(const std::vector<double>& phases) {
  if (phases.empty()) return "none";
  std::ostringstream os;
  os.precision(4);
  for (std::size_t i = 0; i < phases.size(); ++i) os << (i ? ", " : "") << phases[i];
  return os.str();
}

void require_compatible(const ReferenceSRBMotion& A, const ReferenceSRBMotion& B, double psi) {
  const Compatibility c = check_compatibility(A, B, psi);
  if (c.ok) return;
  std::ostringstream os;
  os << "cannot switch at phase " << psi << " (" << (c.contacts_match ? "" : "contact states differ, ")
     << "COM-frame distance " << c.distance << "); compatible phases: " << phase_list(compatible_phases(A, B));
  fail(ErrorCode::InvalidInput, os.str());
}

}  // namespace

void Controller::validate() const {
  require(policy != nullptr, "controller '" + name + "': no policy");
  require(reference != nullptr, "controller '" + name + "': no reference motion");
  require(policy->act_dim() == Action::kDim, "controller '" + name + "': policy must output 10 actions");
  require(policy->obs_dim() == kObsDim || policy->obs_dim() == kInteractiveObsDim,
          "controller '" + name + "': policy must take 21 or 22 observations, got " +
              std::to_string(policy->obs_dim()));
  reference->validate();
  if (deltas) {
    deltas->validate();
    require(deltas->size() == reference->size(), "controller '" + name + "': delta tables have " +
                                                     std::to_string(deltas->size()) + " phases, reference has " +
                                                     std::to_string(reference->size()));
  }
}

Controller make_controller(PolicyCheckpoint checkpoint, std::optional<ReferenceSRBMotion> reference,
                           std::optional<DeltaTables> deltas, std::string name) {
  Controller c;
  c.name = std::move(name);
  if (!checkpoint.env_config.empty()) c.env = parse_env_config(checkpoint.env_config);
  if (!reference) {
    require(!checkpoint.env_config.empty(),
            "controller '" + c.name + "': checkpoint has no environment section; give the reference explicitly");
    reference = load_reference(c.env.reference);
  }
  c.policy = std::make_shared<const PolicyCheckpoint>(std::move(checkpoint));
  c.reference = std::make_shared<const ReferenceSRBMotion>(std::move(*reference));
  c.deltas = std::move(deltas);
  c.validate();
  return c;
}

Controller load_controller(const std::string& path) {
  const std::string text = read_file(path, "controller");
  const json j = detail::parse_json(text, "controller '" + path + "'");
  const std::string name = std::filesystem::path(path).stem().string();
  if (!j.is_object() || !j.contains("checkpoint")) return make_controller(load_checkpoint(path), {}, {}, name);

  const std::string base = std::filesystem::path(path).parent_path().string();
  detail::check_keys(j, {"checkpoint", "reference", "deltas", "name"}, "");
  const std::string ckpt = detail::get_string(j, "checkpoint", "", "");
  const std::string ref = detail::get_string(j, "reference", "", "");
  const std::string del = detail::get_string(j, "deltas", "", "");
  std::optional<ReferenceSRBMotion> motion;
  if (!ref.empty()) motion = load_reference(ref.rfind("synth:", 0) == 0 ? ref : detail::join_path(base, ref));
  std::optional<DeltaTables> tables;
  if (!del.empty()) tables = load_deltas(detail::join_path(base, del));
  return make_controller(load_checkpoint(detail::join_path(base, ckpt)), std::move(motion), std::move(tables),
                         detail::get_string(j, "name", "", name));
}

ContactDistance signed_contact_distance(const ReferenceSRBMotion& ref, double psi, int foot, double phase_rate) {
  require(foot >= 0 && foot < kNumFeet, "signed_contact_distance: foot index out of range");
  require(phase_rate > 0.0 && std::isfinite(phase_rate), "signed_contact_distance: phase rate must be positive");
  const auto& ivs = ref.contact_intervals[foot];
  require(!ivs.empty(), "signed_contact_distance: foot has no contact intervals");
  psi = wrap_phase(psi);
  double since_td = kTwoPi, until_td = kTwoPi, since_lo = kTwoPi, until_lo = kTwoPi;
  for (const auto& iv : ivs) {
    since_td = std::min(since_td, forward_phase(iv.touch_down, psi));
    until_td = std::min(until_td, forward_phase(psi, iv.touch_down));
    since_lo = std::min(since_lo, forward_phase(iv.lift_off, psi));
    until_lo = std::min(until_lo, forward_phase(psi, iv.lift_off));
  }
  ContactDistance d;
  if (ref.in_contact(foot, psi)) {
    d.touch_down = -since_td / phase_rate;
    d.lift_off = until_lo / phase_rate;
  } else {
    d.touch_down = until_td / phase_rate;
    d.lift_off = -since_lo / phase_rate;
  }
  return d;
}

ContactDistance mix_distances(const ContactDistance& a, const ContactDistance& b, double t) {
  if (t <= 0.0) return a;
  if (t >= 1.0) return b;
  return {lerp(a.touch_down, b.touch_down, t), lerp(a.lift_off, b.lift_off, t)};
}

bool contact_from_distance(const ContactDistance& d) {
  if (d.touch_down <= 0.0 && d.lift_off > 0.0) return true;
  if (d.touch_down > 0.0 && d.lift_off <= 0.0) return false;
  // Both events past: the later one holds. Both upcoming: the nearer one ends the current mode.
  if (d.touch_down <= 0.0) return d.touch_down >= d.lift_off;
  return d.touch_down > d.lift_off;
}

RefSample blend_samples(const RefSample& a, const RefSample& b, double t) {
  if (t <= 0.0) return a;
  if (t >= 1.0) return b;
  RefSample out;
  out.T = RigidTransform::unchecked(slerp(a.T.R(), b.T.R(), t), lerp(a.T.p(), b.T.p(), t));
  out.qdot = Twist(lerp(a.qdot.vector(), b.qdot.vector(), t));
  for (int f = 0; f < kNumFeet; ++f) {
    out.contact[f] = t < 0.5 ? a.contact[f] : b.contact[f];
    out.foot_position[f] = lerp(a.foot_position[f], b.foot_position[f], t);
    out.foot_yaw[f] = a.foot_yaw[f] + t * wrap_angle(b.foot_yaw[f] - a.foot_yaw[f]);
    out.foot_rotation[f] = rot_y(out.foot_yaw[f]);
    for (int k = 0; k < kPointsPerFoot; ++k) out.contacts[f][k] = lerp(a.contacts[f][k], b.contacts[f][k], t);
  }
  return out;
}

DeltaSample blend_deltas(const DeltaSample& a, const DeltaSample& b, double t) {
  if (t <= 0.0) return a;
  if (t >= 1.0) return b;
  DeltaSample out;
  out.com = Twist(lerp(a.com.vector(), b.com.vector(), t));
  out.velocity = lerp(a.velocity, b.velocity, t);
  for (int f = 0; f < kNumFeet; ++f)
    for (int k = 0; k < kPointsPerFoot; ++k) out.contacts[f][k] = lerp(a.contacts[f][k], b.contacts[f][k], t);
  return out;
}

double facing_error(const SRBState& state, const FacingCommandStream& commands, double time) {
  return wrap_angle(commands.heading_at(time) - heading_of(state.T.R()));
}

RigidTransform anchor_offset(const RefSample& current, const ReferenceSRBMotion& ref, double psi) {
  return projected_frame(current.T) * projected_frame(sample_reference(ref, psi).T).inverse();
}

Compatibility check_compatibility(const ReferenceSRBMotion& a, const ReferenceSRBMotion& b, double psi) {
  Compatibility c;
  c.contacts_match = true;
  for (int f = 0; f < kNumFeet; ++f) c.contacts_match = c.contacts_match && a.in_contact(f, psi) == b.in_contact(f, psi);
  const RigidTransform Ta = sample_reference(a, psi).T;
  const RigidTransform Tb = sample_reference(b, psi).T;
  const RigidTransform rel_a = projected_frame(Ta).inverse() * Ta;
  const RigidTransform rel_b = projected_frame(Tb).inverse() * Tb;
  c.distance = log_se3(rel_a.inverse() * rel_b).vector().norm();
  c.ok = c.contacts_match && c.distance < kCompatibilityDistance;
  return c;
}

std::vector<double> compatible_phases(const ReferenceSRBMotion& a, const ReferenceSRBMotion& b) {
  std::vector<double> out;
  for (const auto& k : a.samples)
    if (check_compatibility(a, b, k.psi).ok) out.push_back(k.psi);
  return out;
}

double Stitch::weight(double time) const {
  if (time <= start_time) return 1.0;
  return std::exp(-(time - start_time) / time_constant);
}

bool Stitch::is_zero() const {
  bool zero = com.vector().isZero(0.0) && velocity.vector().isZero(0.0);
  for (int f = 0; f < kNumFeet; ++f) zero = zero && foot_position[f].isZero(0.0) && foot_yaw[f] == 0.0;
  if (deltas) {
    zero = zero && deltas->com.vector().isZero(0.0) && deltas->velocity.isZero(0.0);
    for (const auto& foot : deltas->contacts)
      for (const auto& c : foot) zero = zero && c.isZero(0.0);
  }
  return zero;
}

RefSample Stitch::apply(const RefSample& sample, double time) const {
  if (is_zero()) return sample;
  const double w = weight(time);
  RefSample out = sample;
  out.T = sample.T * exp_se3(com * w);
  out.qdot = sample.qdot + velocity * w;
  for (int f = 0; f < kNumFeet; ++f) {
    out.foot_position[f] += w * foot_position[f];
    out.foot_yaw[f] += w * foot_yaw[f];
    out.foot_rotation[f] = rot_y(out.foot_yaw[f]);
    for (auto& c : out.contacts[f]) c += w * foot_position[f];
  }
  return out;
}

DeltaSample Stitch::apply(const DeltaSample& sample, double time) const {
  if (!deltas || is_zero()) return sample;
  const double w = weight(time);
  DeltaSample out = sample;
  out.com = sample.com + deltas->com * w;
  out.velocity += w * deltas->velocity;
  for (int f = 0; f < kNumFeet; ++f)
    for (int k = 0; k < kPointsPerFoot; ++k) out.contacts[f][k] += w * deltas->contacts[f][k];
  return out;
}

Stitch capture_stitch(const RefSample& from, const RefSample& to, const std::optional<DeltaSample>& from_deltas,
                      const std::optional<DeltaSample>& to_deltas, double time, double time_constant) {
  require(time_constant > 0.0, "stitch: time constant must be positive");
  Stitch s;
  s.start_time = time;
  s.time_constant = time_constant;
  s.com = log_se3(to.T.inverse() * from.T);
  s.velocity = from.qdot - to.qdot;
  for (int f = 0; f < kNumFeet; ++f) {
    s.foot_position[f] = from.foot_position[f] - to.foot_position[f];
    s.foot_yaw[f] = wrap_angle(from.foot_yaw[f] - to.foot_yaw[f]);
  }
  if (from_deltas && to_deltas) {
    DeltaSample d;
    d.com = from_deltas->com - to_deltas->com;
    d.velocity = from_deltas->velocity - to_deltas->velocity;
    for (int f = 0; f < kNumFeet; ++f)
      for (int k = 0; k < kPointsPerFoot; ++k) d.contacts[f][k] = from_deltas->contacts[f][k] - to_deltas->contacts[f][k];
    s.deltas = d;
  }
  return s;
}

ControlSession::ControlSession(Controller a, std::optional<Controller> b, const SRBState& initial,
                               SessionOptions options)
    : options_(std::move(options)), sim_(a.env.sim), rng_(options_.seed), state_(initial) {
  controllers_.push_back(std::move(a));
  if (b) controllers_.push_back(std::move(*b));
  for (const auto& c : controllers_) {
    c.validate();
    if (options_.facing && c.obs_dim() != kInteractiveObsDim)
      fail(ErrorCode::InvalidInput, "controller '" + c.name + "' takes " + std::to_string(c.obs_dim()) +
                                        " observations; facing commands need a policy trained with the " +
                                        std::to_string(kInteractiveObsDim) + "-entry interactive observation");
  }
  if (options_.facing) options_.facing->validate();

  PhaseTrack first{initial.ref_offset, initial.cycle, initial.stride_dv, controllers_[0].reference->phase_rate()};
  tracks_.push_back(first);
  if (controllers_.size() == 2) {
    PhaseTrack second = first;
    second.rate = controllers_[1].reference->phase_rate();
    if (controllers_[1].reference != controllers_[0].reference)
      second.offset = anchor_offset(sample(0, state_.psi, first.offset), *controllers_[1].reference, state_.psi);
    tracks_.push_back(second);
  }
}

void ControlSession::set_weight(double t) {
  require(t >= 0.0 && t <= 1.0, "blend weight must lie in [0, 1]");
  require(t == 0.0 || controllers_.size() == 2, "blending needs two controllers");
  weight_ = t;
}

void ControlSession::arm_switch(double psi) {
  require(controllers_.size() == 2, "switching needs two controllers");
  require(!switched_, "controller already switched");
  psi = wrap_phase(psi);
  require_compatible(*controllers_[0].reference, *controllers_[1].reference, psi);
  pending_switch_ = psi;
  if (state_.psi == psi) do_switch();
}

SRBState ControlSession::view(int i) const {
  SRBState s = state_;
  s.ref_offset = tracks_[i].offset;
  s.cycle = tracks_[i].cycle;
  s.stride_dv = tracks_[i].stride_dv;
  return s;
}

RefSample ControlSession::sample(int i, double psi, const RigidTransform& offset) const {
  return sample_reference(*controllers_[i].reference, psi, offset);
}

VecX ControlSession::policy_action(int i) {
  const Controller& c = controllers_[i];
  std::optional<double> delta_y;
  if (c.obs_dim() == kInteractiveObsDim)
    delta_y = options_.facing ? facing_error(state_, *options_.facing, state_.time) : 0.0;
  const VecX obs = observe(view(i), options_.terrain, delta_y);
  const VecX raw = options_.stochastic ? c.policy->act(obs, rng_) : c.policy->act(obs);
  return c.env.bounds.clamp(raw);
}

void ControlSession::do_switch() {
  const double psi = state_.psi;
  const RefSample from = sample(0, psi, tracks_[0].offset);
  if (controllers_[1].reference == controllers_[0].reference)
    tracks_[1].offset = tracks_[0].offset;
  else
    tracks_[1].offset = anchor_offset(from, *controllers_[1].reference, psi);
  tracks_[1].cycle = tracks_[0].cycle;
  const RefSample to = sample(1, psi, tracks_[1].offset);
  std::optional<DeltaSample> dfrom, dto;
  if (controllers_[0].deltas && controllers_[1].deltas) {
    dfrom = sample_deltas(*controllers_[0].deltas, psi);
    dto = sample_deltas(*controllers_[1].deltas, psi);
  }
  stitch_ = capture_stitch(from, to, dfrom, dto, state_.time, options_.stitch_time_constant);
  weight_ = 1.0;
  switched_ = true;
  switch_time_ = state_.time;
  pending_switch_.reset();
}

RefSample ControlSession::reference_sample() const {
  const double psi = state_.psi;
  if (weight_ == 0.0) return sample(0, psi, tracks_[0].offset);
  if (weight_ == 1.0) {
    const RefSample s = sample(1, psi, tracks_[1].offset);
    return stitch_ ? stitch_->apply(s, state_.time) : s;
  }
  RefSample out = blend_samples(sample(0, psi, tracks_[0].offset), sample(1, psi, tracks_[1].offset), weight_);
  for (int f = 0; f < kNumFeet; ++f)
    out.contact[f] = contact_from_distance(
        mix_distances(signed_contact_distance(*controllers_[0].reference, psi, f, tracks_[0].rate),
                      signed_contact_distance(*controllers_[1].reference, psi, f, tracks_[1].rate), weight_));
  return out;
}

std::optional<DeltaSample> ControlSession::delta_sample() const {
  const double psi = state_.psi;
  const bool need_a = weight_ < 1.0, need_b = weight_ > 0.0;
  if ((need_a && !controllers_[0].deltas) || (need_b && !controllers_[1].deltas)) return std::nullopt;
  if (!need_b) return sample_deltas(*controllers_[0].deltas, psi);
  const DeltaSample b = sample_deltas(*controllers_[1].deltas, psi);
  if (!need_a) return stitch_ ? stitch_->apply(b, state_.time) : b;
  return blend_deltas(sample_deltas(*controllers_[0].deltas, psi), b, weight_);
}

ControlStep ControlSession::step(const std::optional<ExternalForce>& ext) {
  const double t = weight_;
  const int n = num_controllers();
  const double dt = sim_.config().dt;
  const SRBState s0 = state_;
  ControlStep out;
  out.weight = t;

  const bool pure = t == 0.0 || (t == 1.0 && (!stitch_ || stitch_->is_zero()));
  if (pure) {
    const int i = t == 0.0 ? 0 : 1;
    out.action = policy_action(i);
    const int cycle0 = tracks_[i].cycle;
    state_ = sim_.step(view(i), Action::from_vector(out.action), *controllers_[i].reference, ext, options_.terrain,
                       &out.info);
    tracks_[i] = {state_.ref_offset, state_.cycle, state_.stride_dv, state_.phase_rate};
    const int wraps = state_.cycle - cycle0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      PhaseTrack& tr = tracks_[j];
      const RefSample now = sample(j, s0.psi, tr.offset);
      for (int w = 0; w < wraps; ++w) tr.offset = controllers_[j].reference->cycle_offset * tr.offset;
      tr.cycle += wraps;
      const RefSample next = sample(j, state_.psi, tr.offset);
      tr.stride_dv = ((state_.T.p() - s0.T.p()) - (next.T.p() - now.T.p())).norm() / dt;
    }
    out.phase_rate = state_.phase_rate;
  } else {
    std::vector<double> rates(n, 0.0);
    std::vector<VecX> actions(n);
    for (int i = 0; i < n; ++i) {
      const bool active = i == 0 ? t < 1.0 : t > 0.0;
      if (!active) continue;
      rates[i] = sim_.phase_rate(view(i), *controllers_[i].reference, options_.terrain);
      actions[i] = policy_action(i);
    }
    const double rate = t == 1.0 ? rates[1] : lerp(rates[0], rates[1], t);
    out.action = t == 1.0 ? actions[1] : lerp(actions[0], actions[1], t);

    double psi_next = s0.psi + rate * dt;
    int wraps = 0;
    while (psi_next >= kTwoPi) {
      psi_next -= kTwoPi;
      ++wraps;
    }
    std::vector<RefSample> now(n), next(n);
    for (int i = 0; i < n; ++i) {
      PhaseTrack& tr = tracks_[i];
      now[i] = sample(i, s0.psi, tr.offset);
      for (int w = 0; w < wraps; ++w) tr.offset = controllers_[i].reference->cycle_offset * tr.offset;
      tr.cycle += wraps;
      next[i] = sample(i, psi_next, tr.offset);
      if (rates[i] > 0.0) tr.rate = rates[i];
    }

    StepTargets targets;
    targets.psi_next = psi_next;
    if (t == 1.0) {
      targets.now = stitch_->apply(now[1], s0.time);
      targets.next = stitch_->apply(next[1], s0.time + dt);
    } else {
      targets.now = blend_samples(now[0], now[1], t);
      targets.next = blend_samples(next[0], next[1], t);
      for (int f = 0; f < kNumFeet; ++f) {
        const auto d = [&](int i, double psi) {
          return signed_contact_distance(*controllers_[i].reference, psi, f, tracks_[i].rate);
        };
        targets.now.contact[f] = contact_from_distance(mix_distances(d(0, s0.psi), d(1, s0.psi), t));
        targets.next.contact[f] = contact_from_distance(mix_distances(d(0, psi_next), d(1, psi_next), t));
      }
    }

    state_ = sim_.advance(s0, Action::from_vector(out.action), targets, ext, options_.terrain, &out.info);
    for (int i = 0; i < n; ++i)
      tracks_[i].stride_dv = ((state_.T.p() - s0.T.p()) - (next[i].T.p() - now[i].T.p())).norm() / dt;
    const int primary = t < 0.5 ? 0 : 1;
    state_.phase_rate = rate;
    state_.ref_offset = tracks_[primary].offset;
    state_.cycle = tracks_[primary].cycle;
    state_.stride_dv = tracks_[primary].stride_dv;
    out.phase_rate = rate;
  }

  for (int f = 0; f < kNumFeet; ++f) {
    out.touch_down[f] = s0.feet[f].mode == FootMode::Swing && state_.feet[f].mode == FootMode::Contact;
    out.lift_off[f] = s0.feet[f].mode == FootMode::Contact && state_.feet[f].mode == FootMode::Swing;
    const ContactDistance da = signed_contact_distance(*controllers_[0].reference, state_.psi, f, tracks_[0].rate);
    out.distance[f] = n == 1 || t == 0.0
                          ? da
                          : mix_distances(da,
                                          signed_contact_distance(*controllers_[1].reference, state_.psi, f,
                                                                  tracks_[1].rate),
                                          t);
  }

  if (pending_switch_) {
    const double travelled = forward_phase(s0.psi, state_.psi);
    const double ahead = forward_phase(s0.psi, *pending_switch_);
    if (ahead > 0.0 && ahead <= travelled) {
      do_switch();
      out.switched = true;
    }
  }

  out.reference = reference_sample();
  out.deltas = delta_sample();
  out.reason = check_termination(state_, out.reference, options_.terrain, std::numeric_limits<double>::infinity());
  out.terminated = out.reason != TerminationReason::None;
  return out;
}

SRBState blended_reset(const Controller& a, const Controller* b, double t, double psi, const Terrain& terrain) {
  require(t >= 0.0 && t <= 1.0, "blend weight must lie in [0, 1]");
  const Simulator sim_a(a.env.sim);
  const SRBState sa = sim_a.reset(*a.reference, psi, terrain);
  if (!b || t == 0.0) return sa;

  const RigidTransform O = b->reference == a.reference
                               ? RigidTransform()
                               : anchor_offset(sample_reference(*a.reference, psi, sa.ref_offset), *b->reference, psi);
  SRBState sb = Simulator(b->env.sim).reset(*b->reference, psi, terrain);
  sb.T = O * sb.T;
  const double turn = heading_of(O.R());
  for (auto& f : sb.feet) {
    f.position = proj_y(O.apply(f.position), terrain);
    f.yaw += turn;
    f.particles[0].value = f.position.x();
    f.particles[1].value = f.position.z();
  }
  sb.ref_offset = sa.ref_offset;
  sb.cycle = sa.cycle;
  if (t == 1.0) return sb;

  SRBState s = sa;
  s.T = RigidTransform::unchecked(slerp(sa.T.R(), sb.T.R(), t), lerp(sa.T.p(), sb.T.p(), t));
  s.qdot = Twist(lerp(sa.qdot.vector(), sb.qdot.vector(), t));
  s.phase_rate = lerp(sa.phase_rate, sb.phase_rate, t);
  for (int f = 0; f < kNumFeet; ++f) {
    FootState& fs = s.feet[f];
    const FootState& fa = sa.feet[f];
    const FootState& fb = sb.feet[f];
    const ContactDistance d =
        mix_distances(signed_contact_distance(*a.reference, psi, f, a.reference->phase_rate()),
                      signed_contact_distance(*b->reference, psi, f, b->reference->phase_rate()), t);
    fs.mode = contact_from_distance(d) ? FootMode::Contact : FootMode::Swing;
    fs.position = proj_y(lerp(fa.position, fb.position, t), terrain);
    fs.yaw = fa.yaw + t * wrap_angle(fb.yaw - fa.yaw);
    for (int k = 0; k < 3; ++k) {
      fs.particles[k].value = lerp(fa.particles[k].value, fb.particles[k].value, t);
      fs.particles[k].velocity = lerp(fa.particles[k].velocity, fb.particles[k].velocity, t);
    }
  }
  return s;
}

RunSummary run_interpolated(const Controller& a, const Controller& b, double t, double duration, double psi0,
                            const Terrain& terrain, std::vector<TrajectoryRow>* trajectory) {
  require(duration > 0.0, "interpolated run: duration must be positive");
  SessionOptions opt;
  opt.terrain = terrain;
  ControlSession session(a, b, blended_reset(a, &b, t, psi0, terrain), opt);
  session.set_weight(t);
  const Vec3 start = session.state().T.p();
  RunSummary r;
  if (trajectory) trajectory->push_back({session.state(), {}, 0.0, 0.0, 0.0});
  while (session.state().time < duration - 1e-9) {
    const ControlStep s = session.step();
    if (trajectory) trajectory->push_back({session.state(), s.info, 0.0, 0.0, 0.0});
    if (s.terminated) {
      r.fell = true;
      r.reason = s.reason;
      break;
    }
  }
  r.duration = session.state().time;
  const Vec3 d = session.state().T.p() - start;
  r.distance = std::hypot(d.x(), d.z());
  r.speed = r.duration > 0.0 ? r.distance / r.duration : 0.0;
  return r;
}

const char* to_string(TransitionMode m) {
  switch (m) {
    case TransitionMode::Switch: return "switch";
    case TransitionMode::Blend: return "blend";
    case TransitionMode::Interpolate: return "interpolate";
  }
  return "?";
}

void TransitionScript::validate() const {
  require(controllers.size() == 2, "transition script: 'controllers' must list two controllers");
  require(duration > 0.0, "transition script: 'duration' must be positive");
  require(trials >= 1, "transition script: 'trials' must be at least 1");
  require(transition_time >= 0.0, "transition script: 'transition_time' must be nonnegative");
  require(start_phase < kTwoPi, "transition script: 'start_phase' must be below 2 pi");
  switch (mode) {
    case TransitionMode::Switch:
      require(values.size() == 1 && values[0] >= 0.0 && values[0] < kTwoPi,
              "transition script: switch needs one transition phase in [0, 2 pi)");
      break;
    case TransitionMode::Blend:
      if (schedule.empty()) {
        require(values.size() == 1 && values[0] > 0.0, "transition script: blend ramp duration must be positive");
      } else {
        for (std::size_t i = 0; i < schedule.size(); ++i) {
          require(schedule[i].second >= 0.0 && schedule[i].second <= 1.0,
                  "transition script: schedule weights must lie in [0, 1]");
          if (i == 0) continue;
          require(schedule[i].first > schedule[i - 1].first, "transition script: schedule times must increase");
          require(schedule[i].second >= schedule[i - 1].second, "transition script: schedule weights must not decrease");
        }
      }
      break;
    case TransitionMode::Interpolate:
      require(!values.empty(), "transition script: interpolate needs at least one weight");
      for (double v : values) require(v >= 0.0 && v <= 1.0, "transition script: interpolation weights must lie in [0, 1]");
      break;
  }
}

double TransitionScript::blend_weight(double time) const {
  if (schedule.empty()) return std::clamp((time - transition_time) / values.at(0), 0.0, 1.0);
  if (time <= schedule.front().first) return schedule.front().second;
  for (std::size_t i = 1; i < schedule.size(); ++i) {
    const auto& [t1, w1] = schedule[i];
    if (time > t1) continue;
    const auto& [t0, w0] = schedule[i - 1];
    return w0 + (w1 - w0) * (time - t0) / (t1 - t0);
  }
  return schedule.back().second;
}

TransitionScript parse_transition_script(const std::string& text, const std::string& base_dir) {
  const json j = detail::parse_json(text, "transition script");
  detail::check_keys(j, {"mode", "t_or_schedule", "controllers", "transition_time", "duration", "trials", "facing",
                         "start_phase"},
                     "");
  TransitionScript s;
  const std::string mode = detail::get_string(j, "mode", "", "");
  if (mode == "switch")
    s.mode = TransitionMode::Switch;
  else if (mode == "blend")
    s.mode = TransitionMode::Blend;
  else if (mode == "interpolate")
    s.mode = TransitionMode::Interpolate;
  else
    fail(ErrorCode::Parse, "config: field 'mode' must be switch, blend or interpolate, got '" + mode + "'");

  if (!j.contains("t_or_schedule")) fail(ErrorCode::Parse, "config: field 't_or_schedule' is required");
  const json& v = j.at("t_or_schedule");
  s.values.clear();
  if (v.is_number()) {
    s.values.push_back(v.get<double>());
  } else if (v.is_array() && !v.empty() && v[0].is_array()) {
    if (s.mode != TransitionMode::Blend) fail(ErrorCode::Parse, "config: field 't_or_schedule' pairs are for blend");
    for (const auto& e : v) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
        fail(ErrorCode::Parse, "config: field 't_or_schedule' entries must be [time, t] pairs");
      s.schedule.emplace_back(e[0].get<double>(), e[1].get<double>());
    }
  } else if (v.is_array()) {
    for (const auto& e : v) {
      if (!e.is_number()) fail(ErrorCode::Parse, "config: field 't_or_schedule' must hold numbers");
      s.values.push_back(e.get<double>());
    }
  } else {
    fail(ErrorCode::Parse, "config: field 't_or_schedule' must be a number or an array");
  }

  if (!j.contains("controllers") || !j.at("controllers").is_array())
    fail(ErrorCode::Parse, "config: field 'controllers' must be an array of paths");
  for (const auto& c : j.at("controllers")) {
    if (!c.is_string()) fail(ErrorCode::Parse, "config: field 'controllers' must hold paths");
    s.controllers.push_back(detail::join_path(base_dir, c.get<std::string>()));
  }
  s.transition_time = detail::get_number(j, "transition_time", "", s.transition_time);
  s.duration = detail::get_number(j, "duration", "", s.duration);
  s.trials = detail::get_int(j, "trials", "", s.trials);
  s.start_phase = detail::get_number(j, "start_phase", "", s.start_phase);
  const std::string facing = detail::get_string(j, "facing", "", "");
  if (!facing.empty()) s.facing = detail::join_path(base_dir, facing);
  try {
    s.validate();
  } catch (const Error& e) {
    fail(ErrorCode::Parse, std::string("config: ") + e.what());
  }
  return s;
}

TransitionScript load_transition_script(const std::string& path) {
  return parse_transition_script(read_file(path, "transition script"),
                                 std::filesystem::path(path).parent_path().string());
}

namespace {

TransitionTrial run_transition_trial(const TransitionScript& script, const Controller& A, const Controller& B,
                                     const std::optional<FacingCommandStream>& facing, double t, double psi0,
                                     std::vector<TrajectoryRow>* traj) {
  TransitionTrial trial;
  trial.t = t;
  trial.start_phase = psi0;
  if (script.mode == TransitionMode::Interpolate) {
    trial.summary = run_interpolated(A, B, t, script.duration, psi0, A.env.terrain, traj);
    trial.success = !trial.summary.fell;
    return trial;
  }

  SessionOptions opt;
  opt.terrain = A.env.terrain;
  opt.facing = facing;
  ControlSession session(A, B, Simulator(A.env.sim).reset(*A.reference, psi0, opt.terrain), opt);
  const Vec3 start = session.state().T.p();
  // A switch may wait up to a cycle (longer when the phase slows) for its phase.
  double end = script.mode == TransitionMode::Switch
                   ? script.transition_time + script.duration + 4.0 * A.reference->cycle_duration
                   : (script.schedule.empty() ? script.transition_time + script.values[0] : script.schedule.back().first) +
                         script.duration;
  bool armed = false;
  if (traj) traj->push_back({session.state(), {}, 0.0, 0.0, 0.0});
  RunSummary& r = trial.summary;
  while (session.state().time < end - 1e-9) {
    const double now = session.state().time;
    if (script.mode == TransitionMode::Switch) {
      if (!armed && now + 1e-9 >= script.transition_time) {
        session.arm_switch(script.values[0]);
        armed = true;
      }
      if (session.switched()) end = std::min(end, *session.switch_time() + script.duration);
    } else {
      session.set_weight(script.blend_weight(now));
    }
    const ControlStep s = session.step();
    if (s.switched) end = std::min(end, *session.switch_time() + script.duration);
    if (traj) traj->push_back({session.state(), s.info, 0.0, 0.0, 0.0});
    if (s.terminated) {
      r.fell = true;
      r.reason = s.reason;
      break;
    }
  }
  r.duration = session.state().time;
  r.switch_time = session.switch_time();
  const Vec3 d = session.state().T.p() - start;
  r.distance = std::hypot(d.x(), d.z());
  r.speed = r.duration > 0.0 ? r.distance / r.duration : 0.0;
  trial.success = !r.fell && (script.mode != TransitionMode::Switch || session.switched());
  return trial;
}

}  // namespace

TransitionReport run_transition(const TransitionScript& script, const std::vector<Controller>& controllers,
                                std::uint64_t seed, int threads, std::vector<TrajectoryRow>* first_trajectory) {
  script.validate();
  require(controllers.size() == 2, "transition: two controllers are required");
  const Controller& A = controllers[0];
  const Controller& B = controllers[1];
  if (script.mode == TransitionMode::Switch) require_compatible(*A.reference, *B.reference, wrap_phase(script.values[0]));
  std::optional<FacingCommandStream> facing;
  if (!script.facing.empty()) facing = FacingCommandStream::load_csv(script.facing);

  struct Job {
    double t;
    double psi0;
  };
  std::vector<Job> jobs;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  const std::vector<double> weights =
      script.mode == TransitionMode::Interpolate ? script.values : std::vector<double>{0.0};
  for (double t : weights)
    for (int k = 0; k < script.trials; ++k) {
      const double draw = phase(rng);
      jobs.push_back({t, script.start_phase >= 0.0 ? script.start_phase : draw});
    }

  TransitionReport report;
  report.mode = script.mode;
  report.trials.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        report.trials[i] = run_transition_trial(script, A, B, facing, jobs[i].t, jobs[i].psi0,
                                                i == 0 ? first_trajectory : nullptr);
        report.trials[i].index = static_cast<int>(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const auto& tr : report.trials) report.successes += tr.success;
  return report;
}

}  // namespace srblab
