#include "srblab/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <random>
#include <thread>

#include "srblab/error.hpp"

namespace srblab {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;
constexpr double kNoCap = 1e9;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

VecX act(const Controller& c, const VecX& obs, bool stochastic, std::mt19937_64& rng) {
  return stochastic ? c.policy->act(obs, rng) : c.policy->act(obs);
}

double horizontal(const Vec3& d) { return std::hypot(d.x(), d.z()); }

template <typename Job>
void run_parallel(std::size_t n, int threads, const Job& job) {
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int k = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  std::vector<std::thread> pool;
  for (int t = 1; t < k; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

Env make_rollout_env(const Controller& controller, const RolloutOptions& options) {
  controller.validate();
  EnvConfig c = controller.env;
  c.episode_cap = options.duration;
  c.pushes = options.pushes;
  if (options.terrain) c.terrain = *options.terrain;
  const bool interactive = controller.obs_dim() == kInteractiveObsDim;
  if (options.facing && !interactive)
    fail(ErrorCode::InvalidInput, "controller '" + controller.name + "' takes " + std::to_string(controller.obs_dim()) +
                                      " observations; facing commands need a policy trained with the 22-entry "
                                      "interactive observation");
  c.interactive.enabled = interactive;
  if (interactive) {
    // Without commands the character keeps its initial heading.
    c.interactive.commands = options.facing
                                 ? *options.facing
                                 : FacingCommandStream{{{0.0, heading_of(sample_reference(*controller.reference,
                                                                                          options.psi0).T.R())}}};
  }
  return Env(c, controller.reference, options.seed);
}

RolloutResult rollout(const Controller& controller, const RolloutOptions& options) {
  require(options.duration > 0.0, "rollout: duration must be positive");
  Env env = make_rollout_env(controller, options);
  env.reset_at(options.psi0);
  std::mt19937_64 rng(options.seed);
  RolloutResult r;
  const Vec3 start = env.state().T.p();
  if (options.record) {
    r.rows.push_back({env.state(), {}, 0.0, 0.0, 0.0});
    r.forces.emplace_back();
  }
  VecX obs = env.observation();
  for (;;) {
    EnvStep st;
    const std::optional<ExternalForce> push = env.active_push();
    try {
      st = env.step(act(controller, obs, options.stochastic, rng));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::OutOfBounds) throw;
      r.note = "left the terrain extent at t=" + std::to_string(env.state().time);
      break;
    }
    obs = st.obs;
    if (options.record) {
      r.rows.push_back({env.state(), st.info, st.reward, st.terms.posture, st.terms.end_effector});
      r.forces.push_back(push);
    }
    if (st.terminated) {
      r.fell = true;
      r.reason = st.reason;
      break;
    }
    if (st.truncated) break;
  }
  r.duration = env.state().time;
  r.distance = horizontal(env.state().T.p() - start);
  return r;
}

PushDirection parse_push_direction(const std::string& name) {
  if (name == "left") return PushDirection::Left;
  if (name == "right") return PushDirection::Right;
  if (name == "behind") return PushDirection::Behind;
  fail(ErrorCode::Parse, "push direction must be left, right or behind, got '" + name + "'");
}

const char* to_string(PushDirection d) {
  switch (d) {
    case PushDirection::Left: return "left";
    case PushDirection::Right: return "right";
    case PushDirection::Behind: return "behind";
  }
  return "?";
}

Vec3 push_unit(PushDirection d) {
  switch (d) {
    case PushDirection::Left: return -Vec3::UnitX();
    case PushDirection::Right: return Vec3::UnitX();
    case PushDirection::Behind: return Vec3::UnitZ();
  }
  return Vec3::Zero();
}

std::vector<double> PushSweep::forces() const {
  validate();
  std::vector<double> out;
  const int n = static_cast<int>(std::floor((force_max - force_min) / force_step + 1e-9)) + 1;
  for (int k = 0; k < n; ++k) out.push_back(force_min + k * force_step);
  return out;
}

void PushSweep::validate() const {
  require(phases >= 1, "push sweep: phases must be at least 1");
  require(trials >= 1, "push sweep: trials must be at least 1");
  require(force_min > 0.0 && force_step > 0.0 && force_max >= force_min,
          "push sweep: need 0 < force_min <= force_max and a positive step");
  require(push_duration > 0.0 && window > 0.0, "push sweep: durations must be positive");
  require(warmup_min >= 0.0 && warmup_max >= warmup_min, "push sweep: bad warm-up range");
}

double PushGrid::always_balanced(int phase) const {
  double f = 0.0;
  for (std::size_t k = 0; k < forces.size(); ++k) {
    if (successes[phase][k] != trials) break;
    f = forces[k];
  }
  return f;
}

double PushGrid::always_falls(int phase) const {
  double f = -1.0;
  for (std::size_t k = forces.size(); k-- > 0;) {
    if (successes[phase][k] != 0) break;
    f = forces[k];
  }
  return f;
}

int PushGrid::inversions(int phase) const {
  int n = 0;
  for (std::size_t k = 1; k < forces.size(); ++k) n += successes[phase][k] > successes[phase][k - 1];
  return n;
}

bool push_trial(const Controller& controller, double psi, double force, const PushSweep& sweep, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double warmup = std::uniform_real_distribution<double>(sweep.warmup_min, sweep.warmup_max)(rng);
  const double psi0 = std::uniform_real_distribution<double>(0.0, kTwoPi)(rng);
  RolloutOptions opt;
  opt.duration = kNoCap;
  opt.psi0 = psi0;
  Env env = make_rollout_env(controller, opt);
  env.reset_at(psi0);
  psi = wrap_phase(psi);
  const double give_up = warmup + 4.0 * controller.reference->cycle_duration;
  std::optional<double> onset;
  Mat3 frame = Mat3::Identity();
  VecX obs = env.observation();
  for (;;) {
    const double t = env.state().time;
    if (onset && t >= *onset + sweep.window - 1e-9) return true;
    if (onset && force > 0.0 && t < *onset + sweep.push_duration - 1e-9)
      env.set_extra_force(ExternalForce{env.state().T.p(), frame * (force * push_unit(sweep.direction))});
    const double before = env.state().psi;
    const EnvStep st = env.step(controller.policy->act(obs));
    obs = st.obs;
    if (st.terminated) return false;
    if (!onset && env.state().time >= warmup) {
      const double ahead = wrap_phase(psi - before);
      const double travelled = wrap_phase(env.state().psi - before);
      if ((ahead > 0.0 && ahead <= travelled) || env.state().time >= give_up) {
        onset = env.state().time;
        frame = yaw_only(env.state().T.R());
      }
    }
  }
}

PushGrid push_experiment(const Controller& controller, const PushSweep& sweep, std::uint64_t seed, int threads) {
  PushGrid g;
  g.forces = sweep.forces();
  for (int i = 0; i < sweep.phases; ++i) g.phases.push_back(kTwoPi * i / sweep.phases);
  g.trials = sweep.trials;
  const int nf = static_cast<int>(g.forces.size());
  const int cols = nf + 1;  // column 0 is the unpushed baseline
  std::vector<char> ok(static_cast<std::size_t>(sweep.phases) * cols * sweep.trials, 0);
  run_parallel(ok.size(), threads, [&](std::size_t idx) {
    const int col = static_cast<int>((idx / sweep.trials) % cols);
    const int phase = static_cast<int>(idx / (static_cast<std::size_t>(sweep.trials) * cols));
    const int trial = static_cast<int>(idx % sweep.trials);
    const double force = col == 0 ? 0.0 : g.forces[col - 1];
    // Every force level replays the same warm-ups and start phases, so columns differ only in the force.
    const std::uint64_t key = static_cast<std::uint64_t>(phase) * sweep.trials + trial;
    ok[idx] = push_trial(controller, g.phases[phase], force, sweep, mix_seed(seed, key));
  });
  g.successes.assign(sweep.phases, std::vector<int>(nf, 0));
  g.zero_force.assign(sweep.phases, 0);
  for (std::size_t idx = 0; idx < ok.size(); ++idx) {
    const int col = static_cast<int>((idx / sweep.trials) % cols);
    const int phase = static_cast<int>(idx / (static_cast<std::size_t>(sweep.trials) * cols));
    if (!ok[idx]) continue;
    if (col == 0)
      ++g.zero_force[phase];
    else
      ++g.successes[phase][col - 1];
  }
  return g;
}

void write_push_grid_csv(std::ostream& out, const PushGrid& g) {
  out << "phase_index,phase,force,successes,trials,ratio\n" << std::setprecision(10);
  for (std::size_t p = 0; p < g.phases.size(); ++p) {
    out << p << ',' << g.phases[p] << ",0," << g.zero_force[p] << ',' << g.trials << ','
        << static_cast<double>(g.zero_force[p]) / g.trials << '\n';
    for (std::size_t k = 0; k < g.forces.size(); ++k)
      out << p << ',' << g.phases[p] << ',' << g.forces[k] << ',' << g.successes[p][k] << ',' << g.trials << ','
          << g.ratio(static_cast<int>(p), static_cast<int>(k)) << '\n';
  }
}

void write_push_summary_csv(std::ostream& out, const PushGrid& g) {
  out << "phase_index,phase,always_balanced_N,always_falls_N,inversions,zero_force_ratio\n" << std::setprecision(10);
  for (std::size_t p = 0; p < g.phases.size(); ++p) {
    const int i = static_cast<int>(p);
    out << p << ',' << g.phases[p] << ',' << g.always_balanced(i) << ',' << g.always_falls(i) << ','
        << g.inversions(i) << ',' << static_cast<double>(g.zero_force[p]) / g.trials << '\n';
  }
}

BoxContact box_contact(const BoxState& box, const BoxConfig& cfg, const Vec3& hand, const Vec3& hand_velocity) {
  BoxContact c;
  c.point = hand;
  if (cfg.mass <= 0.0) return c;
  const Vec3 local = hand - box.position;
  int axis = -1;
  double pen = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    const double d = cfg.half_extents[i] - std::abs(local[i]);
    if (d <= 0.0) return c;
    if (d < pen) {
      pen = d;
      axis = i;
    }
  }
  Vec3 n = Vec3::Zero();
  n[axis] = local[axis] >= 0.0 ? 1.0 : -1.0;
  const double vn = (hand_velocity - box.velocity).dot(n);
  const double magnitude = std::max(0.0, cfg.stiffness * pen - cfg.damping * vn);
  c.penetration = pen;
  c.force_on_character = magnitude * n;
  return c;
}

Vec3 integrate_box(BoxState& box, const BoxConfig& cfg, const Vec3& applied, double dt) {
  if (cfg.mass <= 0.0) return Vec3::Zero();
  const double m = cfg.mass;
  const double limit = cfg.friction * m * cfg.gravity;
  const Vec3 F(applied.x(), 0.0, applied.z());
  const Vec3 v0(box.velocity.x(), 0.0, box.velocity.z());
  Vec3 v1;
  if (v0.norm() > 1e-9) {
    v1 = v0 + dt * (F - limit * v0.normalized()) / m;
    // Kinetic friction stops the box rather than reversing it.
    if (v1.dot(v0) < 0.0 && F.norm() <= limit) v1.setZero();
  } else if (F.norm() <= limit) {
    v1.setZero();
  } else {
    v1 = v0 + dt * (F - limit * F.normalized()) / m;
  }
  box.velocity = v1;
  box.position += dt * v1;
  return m * (v1 - v0) - dt * F;
}

BoxResult box_experiment(const Controller& controller, const BoxConfig& cfg, const RolloutOptions& options) {
  require(cfg.mass >= 0.0, "box: mass must be nonnegative");
  BoxResult out;
  if (cfg.mass == 0.0) {
    out.rollout = rollout(controller, options);
    return out;
  }
  require(cfg.half_extents.minCoeff() > 0.0 && cfg.friction >= 0.0 && cfg.stiffness > 0.0 && cfg.damping >= 0.0,
          "box: extents and stiffness must be positive, friction and damping nonnegative");
  Env env = make_rollout_env(controller, options);
  require(env.config().terrain.is_flat(), "box: the box scenario needs flat ground");
  env.reset_at(options.psi0);
  std::mt19937_64 rng(options.seed);
  const double dt = env.simulator().config().dt;
  const double mass = env.simulator().character().mass;

  const SRBState& s0 = env.state();
  const Mat3 Ry = yaw_only(s0.T.R());
  BoxState box;
  box.position = proj_y(s0.T.p()) + Ry * Vec3(0.0, 0.0, cfg.start_distance + cfg.half_extents.z());
  box.position.y() = cfg.half_extents.y();
  const Vec3 box_start = box.position;
  const Vec3 start = s0.T.p();

  RolloutResult& r = out.rollout;
  if (options.record) {
    r.rows.push_back({env.state(), {}, 0.0, 0.0, 0.0});
    r.forces.emplace_back();
  }
  auto momentum = [&](const SRBState& s) -> Vec3 { return mass * (s.T.R() * s.qdot.linear); };
  out.log.push_back({s0.time, box, Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), momentum(s0)});
  VecX obs = env.observation();
  for (;;) {
    const SRBState& s = env.state();
    const Vec3 hand = s.T.apply(cfg.hand);
    const Vec3 hand_velocity = s.T.R() * (s.qdot.linear + s.qdot.angular.cross(cfg.hand));
    const BoxContact c = box_contact(box, cfg, hand, hand_velocity);
    const Vec3 P0 = momentum(s) + cfg.mass * box.velocity;
    std::optional<ExternalForce> push;
    if (c.force_on_character.squaredNorm() > 0.0) push = ExternalForce{c.point, c.force_on_character};
    env.set_extra_force(push);
    const EnvStep st = env.step(act(controller, obs, options.stochastic, rng));
    obs = st.obs;
    const Vec3 friction = integrate_box(box, cfg, -c.force_on_character, dt);
    const Vec3 P1 = momentum(env.state()) + cfg.mass * box.velocity;
    const Vec3 expected = dt * st.info.contact_force + friction;
    const Vec3 mismatch = (P1 - P0) - expected;
    out.momentum_error = std::max(out.momentum_error, std::hypot(mismatch.x(), mismatch.z()));
    out.log.push_back({env.state().time, box, c.force_on_character, friction, st.info.contact_force,
                       momentum(env.state())});
    if (options.record) {
      r.rows.push_back({env.state(), st.info, st.reward, st.terms.posture, st.terms.end_effector});
      r.forces.push_back(push);
    }
    if (st.terminated) {
      r.fell = true;
      r.reason = st.reason;
      break;
    }
    if (st.truncated) break;
  }
  r.duration = env.state().time;
  r.distance = horizontal(env.state().T.p() - start);
  out.displacement = horizontal(box.position - box_start);
  return out;
}

void write_box_csv(std::ostream& out, const std::vector<BoxLogRow>& log) {
  out << "t,box_x,box_y,box_z,box_vx,box_vz,contact_fx,contact_fy,contact_fz,friction_ix,friction_iz,ground_fx,"
         "ground_fy,ground_fz,char_px,char_py,char_pz\n"
      << std::setprecision(10);
  for (const auto& r : log) {
    out << r.time << ',' << r.box.position.x() << ',' << r.box.position.y() << ',' << r.box.position.z() << ','
        << r.box.velocity.x() << ',' << r.box.velocity.z();
    for (int i = 0; i < 3; ++i) out << ',' << r.contact_force[i];
    out << ',' << r.friction_impulse.x() << ',' << r.friction_impulse.z();
    for (int i = 0; i < 3; ++i) out << ',' << r.ground_force[i];
    for (int i = 0; i < 3; ++i) out << ',' << r.character_momentum[i];
    out << '\n';
  }
}

TerrainResult terrain_experiment(const Controller& controller, const Terrain& terrain, const RolloutOptions& options) {
  RolloutOptions opt = options;
  opt.terrain = terrain;
  TerrainResult out;
  out.rollout = rollout(controller, opt);
  out.truncated = !out.rollout.note.empty();
  out.distance = out.rollout.distance;
  return out;
}

}  // namespace srblab
