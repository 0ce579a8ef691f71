#include "srblab/commands.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json_util.hpp"

namespace srblab {

using detail::json;
namespace fs = std::filesystem;

namespace {

const char* const kTopLevel[] = {"seed",      "threads", "base_dir", "env",       "ppo",       "train",
                                 "controller", "reference", "rollout", "push",    "box",       "terrain",
                                 "deltas",     "mmik",    "transition", "skeleton", "fullbody_reference"};

// Loading and validating inputs: any failure here is reported as a config error.
template <typename F>
auto resolve(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

struct Config {
  json root;
  std::string base;

  bool has(const char* key) const { return root.contains(key); }
  const json& at(const char* key) const { return root.at(key); }
  json section(const char* key) const { return has(key) ? at(key) : json::object(); }
  std::string path(const std::string& p) const { return detail::join_path(base, p); }

  std::string required_path(const char* key) const {
    if (!has(key) || !at(key).is_string()) throw ConfigError(std::string("config: field '") + key + "' must name a file");
    const std::string p = path(at(key).get<std::string>());
    if (!fs::exists(p)) throw ConfigError(std::string("config: field '") + key + "': file not found: '" + p + "'");
    return p;
  }
};

Config parse_config(const std::string& text, const CommandOptions& options) {
  return resolve([&] {
    Config c;
    c.root = text.empty() ? json::object() : detail::parse_json(text, "config");
    if (!c.root.is_object()) throw ConfigError("config: top level must be an object");
    for (auto it = c.root.begin(); it != c.root.end(); ++it)
      if (std::find(std::begin(kTopLevel), std::end(kTopLevel), it.key()) == std::end(kTopLevel))
        throw ConfigError("config: unknown field '" + it.key() + "'");
    c.base = detail::get_string(c.root, "base_dir", "", options.base_dir);
    return c;
  });
}

class Outputs {
 public:
  Outputs(const std::string& dir, CommandResult& result) : dir_(dir), result_(result) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) fail(ErrorCode::Io, "cannot create output directory '" + dir_ + "': " + ec.message());
  }

  std::string path(const std::string& name) const { return (fs::path(dir_) / name).string(); }

  std::ofstream open(const std::string& name) {
    const std::string p = path(name);
    std::ofstream out(p);
    if (!out) fail(ErrorCode::Io, "cannot write '" + p + "'");
    result_.outputs.push_back(p);
    return out;
  }

  void record(const std::string& name) { result_.outputs.push_back(path(name)); }

 private:
  std::string dir_;
  CommandResult& result_;
};

void write_resolved(Outputs& out, const Config& cfg, const CommandOptions& options) {
  json j = cfg.root;
  j["seed"] = options.seed;
  j["threads"] = options.threads;
  j["base_dir"] = fs::absolute(cfg.base).lexically_normal().string();
  out.open("config.resolved.json") << j.dump(2) << "\n";
}

// Relative paths inside an environment section become absolute, so the section can be
// stored in a checkpoint and parsed from anywhere.
json absolute_env(json env, const std::string& base) {
  auto fix = [&](json& v) {
    if (v.is_string() && v.get<std::string>() != "flat" && v.get<std::string>().rfind("synth:", 0) != 0)
      v = fs::absolute(detail::join_path(base, v.get<std::string>())).lexically_normal().string();
  };
  if (env.contains("reference")) fix(env["reference"]);
  if (env.contains("terrain")) fix(env["terrain"]);
  if (env.contains("interactive") && env["interactive"].contains("commands")) fix(env["interactive"]["commands"]);
  return env;
}

Controller controller_from(const Config& cfg) {
  return resolve([&] { return load_controller(cfg.required_path("controller")); });
}

Skeleton skeleton_from(const Config& cfg) {
  return resolve([&] { return cfg.has("skeleton") ? load_skeleton(cfg.required_path("skeleton")) : default_skeleton(); });
}

FullBodyMotion fullbody_from(const Config& cfg, const Skeleton& sk, const ReferenceSRBMotion& ref) {
  const std::string spec = resolve([&] { return detail::get_string(cfg.root, "fullbody_reference", "", "synth"); });
  if (spec == "synth") return synth_fullbody_reference(sk, ref);
  return resolve([&] {
    return motion_from_poses(load_pose_csv(cfg.required_path("fullbody_reference"), sk), ref.cycle_duration,
                             ref.cycle_offset, fs::path(spec).stem().string());
  });
}

DeltaTables zero_deltas(int knots) {
  DeltaTables d;
  d.cycles = 1;
  d.com.assign(knots, Twist{});
  d.contacts.resize(knots);
  for (auto& f : d.contacts)
    for (auto& side : f) side.fill(Vec3::Zero());
  d.velocity.assign(knots, Vec6::Zero());
  return d;
}

FacingCommandStream parse_facing(const json& v, const Config& cfg, const std::string& field) {
  if (v.is_string()) return FacingCommandStream::load_csv(cfg.path(v.get<std::string>()));
  if (!v.is_array()) throw ConfigError("config: field '" + field + "' must be a CSV path or [[time, heading], ...]");
  FacingCommandStream s;
  for (const json& e : v) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
      throw ConfigError("config: field '" + field + "' entries must be [time, heading]");
    s.commands.push_back({e[0].get<double>(), e[1].get<double>()});
  }
  s.validate();
  return s;
}

RolloutOptions rollout_options(const Config& cfg, const CommandOptions& options, double default_duration) {
  return resolve([&] {
    const json j = cfg.section("rollout");
    const std::string p = "rollout.";
    detail::check_keys(j, {"duration", "psi0", "stochastic", "terrain", "pushes", "facing", "mmik"}, p);
    RolloutOptions r;
    r.duration = detail::get_number(j, "duration", p, default_duration);
    if (r.duration <= 0.0) throw ConfigError("config: field 'rollout.duration' must be positive");
    r.psi0 = detail::get_number(j, "psi0", p, 0.0);
    r.stochastic = detail::get_bool(j, "stochastic", p, false);
    r.seed = options.seed;
    if (j.contains("terrain")) r.terrain = parse_terrain_config(j.at("terrain").dump(), cfg.base);
    if (j.contains("pushes")) {
      const json& ps = j.at("pushes");
      if (!ps.is_array()) throw ConfigError("config: field 'rollout.pushes' must be an array");
      for (std::size_t i = 0; i < ps.size(); ++i) {
        const std::string q = p + "pushes[" + std::to_string(i) + "].";
        detail::check_keys(ps[i], {"start", "duration", "force"}, q);
        PushEvent e;
        e.start = detail::get_number(ps[i], "start", q, e.start);
        e.duration = detail::get_number(ps[i], "duration", q, e.duration);
        e.force = detail::get_vec3(ps[i], "force", q, e.force);
        r.pushes.push_back(e);
      }
    }
    if (j.contains("facing")) r.facing = parse_facing(j.at("facing"), cfg, p + "facing");
    return r;
  });
}

struct MMIKSettings {
  MMIKWeights weights;
  MMIKToggles toggles;
  MMIKOptions options;
  std::string deltas;  // path, "zero", or empty for the controller's tables
  std::string trajectory;
};

MMIKSettings mmik_settings(const Config& cfg) {
  return resolve([&] {
    const json j = cfg.section("mmik");
    const std::string p = "mmik.";
    detail::check_keys(j, {"trajectory", "deltas", "weights", "toggles", "max_iterations", "grad_tol"}, p);
    MMIKSettings s;
    s.deltas = detail::get_string(j, "deltas", p, "");
    if (!s.deltas.empty() && s.deltas != "zero") s.deltas = cfg.path(s.deltas);
    s.trajectory = detail::get_string(j, "trajectory", p, "");
    if (!s.trajectory.empty()) s.trajectory = cfg.path(s.trajectory);
    if (j.contains("weights")) {
      const json& w = j.at("weights");
      const std::string q = p + "weights.";
      detail::check_keys(w, {"w_contact", "w_g", "w_m", "w_p", "w_v", "w_r", "push_gain"}, q);
      MMIKWeights& m = s.weights;
      m.w_contact = detail::get_number(w, "w_contact", q, m.w_contact);
      m.w_g = detail::get_number(w, "w_g", q, m.w_g);
      m.w_m = detail::get_number(w, "w_m", q, m.w_m);
      m.w_p = detail::get_number(w, "w_p", q, m.w_p);
      m.w_v = detail::get_number(w, "w_v", q, m.w_v);
      m.w_r = detail::get_number(w, "w_r", q, m.w_r);
      m.push_gain = detail::get_number(w, "push_gain", q, m.push_gain);
      for (double v : {m.w_contact, m.w_g, m.w_m, m.w_p, m.w_v, m.w_r, m.push_gain})
        if (v < 0.0) throw ConfigError("config: field 'mmik.weights' entries must be nonnegative");
    }
    if (j.contains("toggles")) {
      const json& t = j.at("toggles");
      const std::string q = p + "toggles.";
      detail::check_keys(t, {"com_delta", "velocity_delta"}, q);
      s.toggles.com_delta = detail::get_bool(t, "com_delta", q, true);
      s.toggles.velocity_delta = detail::get_bool(t, "velocity_delta", q, true);
    }
    s.options.max_iterations = detail::get_int(j, "max_iterations", p, s.options.max_iterations);
    s.options.grad_tol = detail::get_number(j, "grad_tol", p, s.options.grad_tol);
    if (s.options.max_iterations < 1 || s.options.grad_tol <= 0.0)
      throw ConfigError("config: 'mmik' needs max_iterations >= 1 and a positive grad_tol");
    return s;
  });
}

DeltaTables deltas_for(const MMIKSettings& s, const std::optional<DeltaTables>& fallback, int knots) {
  if (s.deltas == "zero") return zero_deltas(knots);
  if (!s.deltas.empty()) return resolve([&] { return load_deltas(s.deltas); });
  if (fallback) return *fallback;
  throw ConfigError("config: field 'mmik.deltas' is required (a delta file or \"zero\")");
}

json reconstruction_summary(const ReconstructionReport& r) {
  return {{"frames", r.frames.size()},
          {"contact_p95_m", r.contact_p95},
          {"contact_max_m", r.contact_max},
          {"momentum_mean", r.momentum_mean},
          {"nonconverged_frames", r.nonconverged}};
}

void write_reconstruction(Outputs& out, const Skeleton& sk, const ReconstructionReport& r) {
  std::ofstream poses = out.open("fullbody.csv");
  write_pose_header(poses, sk);
  for (std::size_t k = 0; k < r.frames.size(); ++k) write_pose_row(poses, static_cast<int>(k), r.frames[k].time, r.frames[k].pose);
  std::ofstream frames = out.open("mmik_frames.csv");
  frames << "frame,time,contact_max,contact_mean,momentum_residual,cost,iterations,converged\n" << std::setprecision(10);
  for (std::size_t k = 0; k < r.frames.size(); ++k) {
    const ReconstructionFrame& f = r.frames[k];
    double mx = 0.0, sum = 0.0;
    for (double e : f.contact_errors) {
      mx = std::max(mx, e);
      sum += e;
    }
    const double mean = f.contact_errors.empty() ? 0.0 : sum / f.contact_errors.size();
    frames << k << ',' << f.time << ',' << mx << ',' << mean << ',' << f.momentum_residual << ',' << f.cost << ','
           << f.iterations << ',' << (f.converged ? 1 : 0) << '\n';
  }
}

void write_trajectory(Outputs& out, const std::vector<TrajectoryRow>& rows, const std::string& name = "trajectory.csv") {
  std::ofstream f = out.open(name);
  write_trajectory_header(f);
  for (const auto& row : rows) write_trajectory_row(f, row);
}

json rollout_summary(const RolloutResult& r) {
  json j = {{"fell", r.fell},
            {"duration_s", r.duration},
            {"distance_m", r.distance},
            {"steps", r.rows.empty() ? 0 : r.rows.size() - 1}};
  if (r.fell) {
    j["fall_time_s"] = r.duration;
    j["reason"] = to_string(r.reason);
  }
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

// ---------------------------------------------------------------------------

CommandResult cmd_train(const Config& cfg, const CommandOptions& options) {
  struct Setup {
    EnvConfig env;
    json env_json;
    PPOConfig ppo;
    std::optional<PolicyCheckpoint> resume;
    ReferenceSRBMotion ref;
  };
  const Setup s = resolve([&] {
    Setup s;
    s.env_json = absolute_env(cfg.section("env"), cfg.base);
    s.env = parse_env_config(s.env_json.dump());
    s.ref = load_reference(s.env.reference);
    json ppo = cfg.section("ppo");
    if (ppo.is_object() && !ppo.contains("threads")) ppo["threads"] = options.threads;
    s.ppo = parse_ppo_config(ppo.dump());
    s.ppo.validate();
    const json t = cfg.section("train");
    detail::check_keys(t, {"resume"}, "train.");
    const std::string resume = detail::get_string(t, "resume", "train.", "");
    if (!resume.empty()) {
      const std::string p = cfg.path(resume);
      if (!fs::exists(p)) throw ConfigError("config: field 'train.resume': file not found: '" + p + "'");
      s.resume = load_checkpoint(p);
    }
    return s;
  });

  CommandResult result;
  Outputs out(options.out_dir, result);
  write_resolved(out, cfg, options);
  out.open("env_config.json") << s.env_json.dump(2) << "\n";

  const auto ref = std::make_shared<const ReferenceSRBMotion>(s.ref);
  const EnvConfig env = s.env;
  const EnvFactory factory = [env, ref](std::uint64_t seed) { return std::make_unique<Env>(env, ref, seed); };
  std::ofstream curve = out.open("curve.csv");
  write_curve_header(curve);
  TrainResult tr = train(factory, s.ppo, options.seed, s.resume ? &*s.resume : nullptr, [&](const CurveRow& row) {
    write_curve_row(curve, row);
    curve.flush();
  });
  tr.checkpoint.env_config = s.env_json.dump();
  const std::string ckpt = out.path("checkpoint.json");
  save_checkpoint(tr.checkpoint, ckpt);
  out.record("checkpoint.json");

  std::ofstream evals = out.open("evals.csv");
  evals << "step,mean_length_s,reached,episodes,long_mean_length_s,long_reached\n" << std::setprecision(10);
  for (const auto& e : tr.evals)
    evals << e.step << ',' << e.at_cap.mean_length << ',' << e.at_cap.reached << ',' << e.at_cap.lengths.size() << ','
          << e.long_run.mean_length << ',' << e.long_run.reached << '\n';

  json j = {{"steps", tr.steps},
            {"seconds", tr.seconds},
            {"updates", tr.curve.size()},
            {"first_target_step", tr.first_target_step},
            {"reached_target", tr.reached_target},
            {"checkpoint", ckpt}};
  if (!tr.curve.empty()) j["final_mean_ep_len_s"] = tr.curve.back().mean_ep_len;
  result.summary = j.dump();
  return result;
}

CommandResult cmd_rollout(const Config& cfg, const CommandOptions& options) {
  const Controller c = controller_from(cfg);
  const RolloutOptions ro = rollout_options(cfg, options, 20.0);
  const bool with_mmik = resolve([&] { return detail::get_bool(cfg.section("rollout"), "mmik", "rollout.", false); });
  std::optional<MMIKSettings> mmik;
  if (with_mmik) mmik = mmik_settings(cfg);

  CommandResult result;
  Outputs out(options.out_dir, result);
  write_resolved(out, cfg, options);
  const auto t0 = std::chrono::steady_clock::now();
  const RolloutResult r = rollout(c, ro);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_trajectory(out, r.rows);
  json j = rollout_summary(r);
  j["steps_per_second"] = wall > 0.0 ? (r.rows.size() - 1) / wall : 0.0;
  if (mmik) {
    const Skeleton sk = skeleton_from(cfg);
    const FullBodyMotion fb = fullbody_from(cfg, sk, *c.reference);
    const DeltaTables d = deltas_for(*mmik, c.deltas, fb.size());
    std::vector<SRBState> traj;
    for (const auto& row : r.rows) traj.push_back(row.state);
    const ReconstructionReport rep =
        reconstruct(sk, traj, r.forces, *c.reference, fb, d, mmik->weights, mmik->toggles, mmik->options);
    write_reconstruction(out, sk, rep);
    j["mmik"] = reconstruction_summary(rep);
  }
  result.fell = r.fell;
  result.summary = j.dump();
  return result;
}

CommandResult cmd_push(const Config& cfg, const CommandOptions& options) {
  const Controller c = controller_from(cfg);
  const PushSweep sweep = resolve([&] {
    const json j = cfg.section("push");
    const std::string p = "push.";
    detail::check_keys(j, {"phases", "force_min", "force_max", "force_step", "trials", "duration", "window", "warmup",
                           "direction"},
                       p);
    PushSweep s;
    s.phases = detail::get_int(j, "phases", p, s.phases);
    s.force_min = detail::get_number(j, "force_min", p, s.force_min);
    s.force_max = detail::get_number(j, "force_max", p, s.force_max);
    s.force_step = detail::get_number(j, "force_step", p, s.force_step);
    s.trials = detail::get_int(j, "trials", p, s.trials);
    s.push_duration = detail::get_number(j, "duration", p, s.push_duration);
    s.window = detail::get_number(j, "window", p, s.window);
    if (j.contains("warmup")) {
      const json& w = j.at("warmup");
      if (!w.is_array() || w.size() != 2 || !w[0].is_number() || !w[1].is_number())
        throw ConfigError("config: field 'push.warmup' must hold 2 numbers");
      s.warmup_min = w[0].get<double>();
      s.warmup_max = w[1].get<double>();
    }
    s.direction = parse_push_direction(detail::get_string(j, "direction", p, to_string(s.direction)));
    s.validate();
    return s;
  });

  CommandResult result;
  Outputs out(options.out_dir, result);
  write_resolved(out, cfg, options);
  const PushGrid g = push_experiment(c, sweep, options.seed, options.threads);
  std::ofstream grid = out.open("push_grid.csv");
  write_push_grid_csv(grid, g);
  std::ofstream summary = out.open("push_summary.csv");
  write_push_summary_csv(summary, g);

  int inversions = 0, zero_failures = 0;
  json balanced = json::array(), falls = json::array();
  for (std::size_t i = 0; i < g.phases.size(); ++i) {
    inversions = std::max(inversions, g.inversions(static_cast<int>(i)));
    zero_failures += g.trials - g.zero_force[i];
    balanced.push_back(g.always_balanced(static_cast<int>(i)));
    falls.push_back(g.always_falls(static_cast<int>(i)));
  }
  const json j = {{"phases", g.phases.size()},
                  {"force_levels", g.forces.size()},
                  {"trials", g.trials},
                  {"direction", to_string(sweep.direction)},
                  {"zero_force_failures", zero_failures},
                  {"max_inversions_per_phase", inversions},
                  {"always_balanced_N", balanced},
                  {"always_falls_N", falls}};
  result.summary = j.dump();
  return result;
}

CommandResult cmd_box(const Config& cfg, const CommandOptions& options) {
  const Controller c = controller_from(cfg);
  const BoxConfig box = resolve([&] {
    const json j = cfg.section("box");
    const std::string p = "box.";
    detail::check_keys(j, {"mass", "half_extents", "start_distance", "friction", "stiffness", "damping", "hand"}, p);
    BoxConfig b;
    b.mass = detail::get_number(j, "mass", p, b.mass);
    b.half_extents = detail::get_vec3(j, "half_extents", p, b.half_extents);
    b.start_distance = detail::get_number(j, "start_distance", p, b.start_distance);
    b.friction = detail::get_number(j, "friction", p, b.friction);
    b.stiffness = detail::get_number(j, "stiffness", p, b.stiffness);
    b.damping = detail::get_number(j, "damping", p, b.damping);
    b.hand = detail::get_vec3(j, "hand", p, b.hand);
    if (b.mass < 0.0 || b.half_extents.minCoeff() <= 0.0 || b.friction < 0.0 || b.stiffness <= 0.0 || b.damping < 0.0)
      throw ConfigError("config: 'box' needs mass >= 0, positive extents and stiffness, nonnegative friction and damping");
    return b;
  });
  const RolloutOptions ro = rollout_options(cfg, options, 10.0);

  CommandResult result;
  Outputs out(options.out_dir, result);
  write_resolved(out, cfg, options);
  const BoxResult r = box_experiment(c, box, ro);
  write_trajectory(out, r.rollout.rows);
  std::ofstream log = out.open("box.csv");
  write_box_csv(log, r.log);
  json j = rollout_summary(r.rollout);
  j["box_mass_kg"] = box.mass;
  j["box_displacement_m"] = r.displacement;
  j["momentum_bookkeeping_error"] = r.momentum_error;
  result.fell = r.rollout.fell;
  result.summary = j.dump();
  return result;
}

CommandResult cmd_terrain(const Config& cfg, const CommandOptions& options) {
  const Controller c = controller_from(cfg);
  if (!cfg.has("terrain")) throw ConfigError("config: field 'terrain' is required");
  const Terrain terrain = resolve([&] { return parse_terrain_config(cfg.at("terrain").dump(), cfg.base); });
  const RolloutOptions ro = rollout_options(cfg, options, 20.0);

  CommandResult result;
  Outputs out(options.out_dir, result);
  write_resolved(out, cfg, options);
  const TerrainResult r = terrain_experiment(c, terrain, ro);
  write_trajectory(out, r.rollout.rows);
  json j = rollout_summary(r.rollout);
  j["traversed_m"] = r.distance;
  j["truncated"] = r.truncated;
  result.fell = r.rollout.fell;
  result.summary = j.dump();
  return result;
}

CommandResult cmd_deltas(const Config& cfg, const CommandOptions& options) {
  const Controller c = controller_from(cfg);
  DeltaPipelineOptions po = resolve([&] {
    const json j = cfg.section("deltas");
    const std::string p = "deltas.";
    detail::check_keys(j, {"cycles", "warmup_cycles"}, p);
    DeltaPipelineOptions o;
    o.cycles = detail::get_int(j, "cycles", p, o.cycles);
    o.warmup_cycles = detail::get_int(j, "warmup_cycles", p, o.warmup_cycles);
    if (o.cycles < 1 || o.warmup_cycles < 0)
      throw ConfigError("config: 'deltas' needs cycles >= 1 and warmup_cycles >= 0");
    return o;
  });
  po.seed = options.seed;
  const Skeleton sk = skeleton_from(cfg);
  const FullBodyMotion fb = fullbody_from(cfg, sk, *c.reference);

  CommandResult result;
  Outputs out(options.out_dir, result);
  write_resolved(out, cfg, options);
  const DeltaPipelineResult r = generate_deltas(c, sk, fb, po);
  save_deltas(r.deltas, out.path("deltas.json"));
  out.record("deltas.json");
  double com = 0.0, vel = 0.0;
  for (int i = 0; i < r.deltas.size(); ++i) {
    com = std::max(com, r.deltas.com[i].vector().norm());
    vel = std::max(vel, r.deltas.velocity[i].norm());
  }
  const json j = {{"cycles", r.deltas.cycles},
                  {"knots", r.deltas.size()},
                  {"max_com_delta", com},
                  {"max_velocity_delta", vel},
                  {"deltas", out.path("deltas.json")}};
  result.summary = j.dump();
  return result;
}

CommandResult cmd_mmik(const Config& cfg, const CommandOptions& options) {
  const MMIKSettings s = mmik_settings(cfg);
  if (s.trajectory.empty()) throw ConfigError("config: field 'mmik.trajectory' is required");
  const std::vector<SRBState> traj = resolve([&] {
    if (!fs::exists(s.trajectory)) throw ConfigError("config: field 'mmik.trajectory': file not found: '" + s.trajectory + "'");
    return read_trajectory_csv(s.trajectory);
  });
  const ReferenceSRBMotion ref = resolve([&] {
    std::string spec = detail::get_string(cfg.root, "reference", "", "");
    if (spec.empty()) return load_reference(parse_env_config(absolute_env(cfg.section("env"), cfg.base).dump()).reference);
    return load_reference(spec.rfind("synth:", 0) == 0 ? spec : cfg.path(spec));
  });
  const Skeleton sk = skeleton_from(cfg);
  const FullBodyMotion fb = fullbody_from(cfg, sk, ref);
  const DeltaTables d = deltas_for(s, std::nullopt, fb.size());

  CommandResult result;
  Outputs out(options.out_dir, result);
  write_resolved(out, cfg, options);
  const ReconstructionReport rep = reconstruct(sk, traj, {}, ref, fb, d, s.weights, s.toggles, s.options);
  write_reconstruction(out, sk, rep);
  json j = reconstruction_summary(rep);
  j["toggles"] = {{"com_delta", s.toggles.com_delta}, {"velocity_delta", s.toggles.velocity_delta}};
  result.summary = j.dump();
  return result;
}

CommandResult cmd_transition(const Config& cfg, const CommandOptions& options) {
  if (!cfg.has("transition")) throw ConfigError("config: field 'transition' is required");
  const TransitionScript script = resolve([&] {
    const json& t = cfg.at("transition");
    if (t.is_string()) {
      const std::string p = cfg.required_path("transition");
      return load_transition_script(p);
    }
    return parse_transition_script(t.dump(), cfg.base);
  });
  const std::vector<Controller> controllers = resolve([&] {
    std::vector<Controller> cs;
    for (const auto& p : script.controllers) {
      if (!fs::exists(p)) throw ConfigError("config: transition controller not found: '" + p + "'");
      cs.push_back(load_controller(p));
    }
    return cs;
  });

  CommandResult result;
  Outputs out(options.out_dir, result);
  write_resolved(out, cfg, options);
  std::vector<TrajectoryRow> first;
  const TransitionReport rep = run_transition(script, controllers, options.seed, options.threads, &first);
  write_trajectory(out, first, "trajectory_trial0.csv");
  std::ofstream trials = out.open("transition_trials.csv");
  trials << "trial,t,start_phase,duration_s,fell,reason,speed_mps,distance_m,switch_time_s,success\n"
         << std::setprecision(10);
  for (const auto& t : rep.trials) {
    trials << t.index << ',' << t.t << ',' << t.start_phase << ',' << t.summary.duration << ','
           << (t.summary.fell ? 1 : 0) << ',' << to_string(t.summary.reason) << ',' << t.summary.speed << ','
           << t.summary.distance << ',';
    if (t.summary.switch_time) trials << *t.summary.switch_time;
    trials << ',' << (t.success ? 1 : 0) << '\n';
  }
  const json j = {{"mode", to_string(rep.mode)}, {"trials", rep.trials.size()}, {"successes", rep.successes}};
  result.summary = j.dump();
  return result;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"train", "rollout", "push", "box", "terrain", "deltas", "mmik", "transition"};
  return names;
}

CommandResult run_command(const std::string& name, const std::string& config_json, const CommandOptions& options) {
  if (options.threads < 1) throw ConfigError("threads must be at least 1");
  const Config cfg = parse_config(config_json, options);
  if (name == "train") return cmd_train(cfg, options);
  if (name == "rollout") return cmd_rollout(cfg, options);
  if (name == "push") return cmd_push(cfg, options);
  if (name == "box") return cmd_box(cfg, options);
  if (name == "terrain") return cmd_terrain(cfg, options);
  if (name == "deltas") return cmd_deltas(cfg, options);
  if (name == "mmik") return cmd_mmik(cfg, options);
  if (name == "transition") return cmd_transition(cfg, options);
  throw ConfigError("unknown command '" + name + "'");
}

DeltaPipelineResult generate_deltas(const Controller& controller, const Skeleton& skeleton,
                                    const FullBodyMotion& reference, const DeltaPipelineOptions& options) {
  require(options.cycles >= 1 && options.warmup_cycles >= 0, "deltas: need cycles >= 1 and warmup_cycles >= 0");
  const int needed = options.warmup_cycles + options.cycles;
  RolloutOptions ro;
  ro.duration = 1e9;
  ro.seed = options.seed;
  Env env = make_rollout_env(controller, ro);
  env.reset_at(0.0);
  const double give_up = 10.0 * needed * controller.reference->cycle_duration;
  DeltaPipelineResult out;
  out.trajectory.push_back(env.state());
  VecX obs = env.observation();
  while (env.state().cycle < needed) {
    if (env.state().time > give_up)
      fail(ErrorCode::State, "deltas: the policy completed only " + std::to_string(env.state().cycle) + " of " +
                                 std::to_string(needed) + " cycles in " + std::to_string(give_up) + " s");
    const EnvStep st = env.step(controller.policy->act(obs));
    obs = st.obs;
    out.trajectory.push_back(env.state());
    if (st.terminated)
      fail(ErrorCode::State, "deltas: the policy fell during baseline generation at t=" +
                                 std::to_string(env.state().time) + " s (" + to_string(st.reason) +
                                 "); train it longer before extracting deltas");
  }
  BaselineMotion all = collect_cycles(out.trajectory, reference.size());
  require(static_cast<int>(all.cycles.size()) >= needed, "deltas: baseline holds fewer cycles than requested");
  BaselineMotion kept;
  kept.cycles.assign(all.cycles.begin() + options.warmup_cycles, all.cycles.begin() + needed);
  out.baseline = align_baseline(kept, *controller.reference);
  out.deltas = compute_deltas(out.baseline, skeleton, reference);
  return out;
}

}  // namespace srblab
