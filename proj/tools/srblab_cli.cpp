#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "srblab.h"

namespace {

using nlohmann::json;

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out = ".";
};

// Per-command flags that patch the config before it reaches the library.
struct Overrides {
  std::string controller;
  std::optional<double> duration;
  std::optional<double> mass;
  std::optional<std::string> direction;
  std::string trajectory;
  std::string deltas;
  std::string terrain;
  std::optional<bool> velocity_delta;
  std::optional<bool> com_delta;
};

int config_error(const std::string& message) {
  std::cerr << "srblab: config error: " << message << "\n";
  return kExitConfig;
}

json& section(json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_object()) j[key] = json::object();
  return j[key];
}

// Command-line paths are relative to the working directory, not to the config file.
std::string from_cwd(const std::string& p) { return std::filesystem::absolute(p).string(); }

void apply(const Overrides& o, json& j) {
  if (!o.controller.empty()) j["controller"] = from_cwd(o.controller);
  if (o.duration) section(j, "rollout")["duration"] = *o.duration;
  if (o.mass) section(j, "box")["mass"] = *o.mass;
  if (o.direction) section(j, "push")["direction"] = *o.direction;
  if (!o.terrain.empty()) j["terrain"] = o.terrain == "flat" ? o.terrain : from_cwd(o.terrain);
  if (!o.trajectory.empty()) section(j, "mmik")["trajectory"] = from_cwd(o.trajectory);
  if (!o.deltas.empty()) section(j, "mmik")["deltas"] = o.deltas == "zero" ? o.deltas : from_cwd(o.deltas);
  if (o.velocity_delta) section(section(j, "mmik"), "toggles")["velocity_delta"] = *o.velocity_delta;
  if (o.com_delta) section(section(j, "mmik"), "toggles")["com_delta"] = *o.com_delta;
}

int run(const std::string& command, const Globals& g, const Overrides& o) {
  json config = json::object();
  std::string base = ".";
  if (!g.config.empty()) {
    std::ifstream in(g.config);
    if (!in) return config_error("cannot read config file '" + g.config + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      config = json::parse(ss.str());
    } catch (const json::exception& e) {
      return config_error("'" + g.config + "' is not valid JSON: " + e.what());
    }
    if (!config.is_object()) return config_error("'" + g.config + "' must hold a JSON object");
    base = std::filesystem::path(g.config).parent_path().string();
    if (base.empty()) base = ".";
  }
  apply(o, config);

  srb_run_options opts;
  srb_run_options_init(&opts);
  try {
    opts.seed = g.seed ? *g.seed : config.value("seed", std::uint64_t{0});
    opts.threads = g.threads ? *g.threads : config.value("threads", 1);
  } catch (const json::exception& e) {
    return config_error(std::string("fields 'seed' and 'threads' must be integers: ") + e.what());
  }
  opts.out_dir = g.out.c_str();
  opts.base_dir = base.c_str();

  srb_report* report = nullptr;
  const std::string text = config.dump();
  const srb_status status = srb_run_command(command.c_str(), text.c_str(), &opts, &report);
  if (status != SRB_OK) {
    std::string message = srb_last_error();
    if (message.rfind("config: ", 0) == 0) message.erase(0, 8);
    std::cerr << "srblab " << command << ": " << (status == SRB_ERROR_CONFIG ? "config error: " : "error: ") << message
              << "\n";
    return status == SRB_ERROR_CONFIG ? kExitConfig : kExitRuntime;
  }
  std::cout << srb_report_summary(report) << "\n";
  for (int i = 0; i < srb_report_output_count(report); ++i) std::cerr << "wrote " << srb_report_output(report, i) << "\n";
  const bool fell = srb_report_fell(report) != 0;
  srb_report_free(report);
  if (fell) std::cerr << "srblab " << command << ": the character fell before the end of the run\n";
  return fell ? kExitRuntime : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SRB character control: training, rollouts and experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(srb_version()));

  Globals g;
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--seed", g.seed, "Random seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);

  Overrides o;
  auto add_controller = [&](CLI::App* sub) {
    sub->add_option("--controller", o.controller, "Checkpoint or controller descriptor");
  };
  auto add_duration = [&](CLI::App* sub) { sub->add_option("--duration", o.duration, "Simulated seconds"); };

  app.add_subcommand("train", "Train a tracking policy with PPO");
  CLI::App* rollout = app.add_subcommand("rollout", "Run a policy and write the SRB trajectory");
  add_controller(rollout);
  add_duration(rollout);
  CLI::App* push = app.add_subcommand("push", "Push-recovery grid over phases and force levels");
  add_controller(push);
  push->add_option("--direction", o.direction, "left, right or behind");
  CLI::App* box = app.add_subcommand("box", "Push a box along flat ground");
  add_controller(box);
  add_duration(box);
  box->add_option("--mass", o.mass, "Box mass in kg (0 removes the box)");
  CLI::App* terrain = app.add_subcommand("terrain", "Run a policy over a heightfield or slope");
  add_controller(terrain);
  add_duration(terrain);
  terrain->add_option("--heightfield", o.terrain, "Heightfield file (or 'flat')");
  CLI::App* deltas = app.add_subcommand("deltas", "Extract delta tables from policy rollouts");
  add_controller(deltas);
  CLI::App* mmik = app.add_subcommand("mmik", "Reconstruct full-body motion from an SRB trajectory");
  mmik->add_option("--trajectory", o.trajectory, "Trajectory CSV from rollout");
  mmik->add_option("--deltas", o.deltas, "Delta tables file (or 'zero')");
  mmik->add_option("--velocity-delta", o.velocity_delta, "Use the velocity delta (true/false)");
  mmik->add_option("--com-delta", o.com_delta, "Use the COM delta (true/false)");
  app.add_subcommand("transition", "Switch, blend or interpolate between controllers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  return run(command, g, o);
}
