#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "srblab.h"

namespace fs = std::filesystem;

namespace {

const std::string kDir = (fs::temp_directory_path() / "srblab_test_capi").string();

std::string trained_checkpoint() {
  srb_run_options o;
  srb_run_options_init(&o);
  o.seed = 4;
  const std::string out = kDir + "/train";
  o.out_dir = out.c_str();
  srb_report* r = nullptr;
  const char* cfg =
      R"({"env": {"reference": "synth:in_place_step"},
          "ppo": {"total_steps": 1024, "steps_per_update": 512, "minibatch": 128, "eval_every": 0, "hidden": [8]}})";
  REQUIRE(srb_run_command("train", cfg, &o, &r) == SRB_OK);
  REQUIRE(r != nullptr);
  CHECK(std::string(srb_report_summary(r)).find("\"steps\":1024") != std::string::npos);
  srb_report_free(r);
  return out + "/checkpoint.json";
}

}  // namespace

TEST_CASE("command table and errors") {
  CHECK(std::string(srb_version()).size() > 0);
  REQUIRE(srb_command_count() == 8);
  CHECK(std::string(srb_command_name(0)) == "train");
  CHECK(srb_command_name(8) == nullptr);

  srb_report* r = nullptr;
  CHECK(srb_run_command("rollout", "{}", nullptr, &r) == SRB_ERROR_CONFIG);
  CHECK(r == nullptr);
  CHECK(std::string(srb_last_error()).find("controller") != std::string::npos);
  CHECK(srb_run_command(nullptr, "{}", nullptr, &r) == SRB_ERROR_ARGUMENT);
  CHECK(srb_run_command("rollout", "{", nullptr, &r) == SRB_ERROR_CONFIG);

  srb_controller* c = nullptr;
  CHECK(srb_controller_load("/no/such/checkpoint.json", &c) == SRB_ERROR_RUNTIME);
  CHECK(c == nullptr);
  CHECK(std::string(srb_last_error()).find("/no/such/checkpoint.json") != std::string::npos);
}

TEST_CASE("controller and environment handles") {
  const std::string ckpt = trained_checkpoint();
  srb_controller* c = nullptr;
  REQUIRE(srb_controller_load(ckpt.c_str(), &c) == SRB_OK);
  CHECK(std::string(srb_last_error()).empty());
  const int od = srb_controller_obs_dim(c), ad = srb_controller_act_dim(c);
  CHECK(od == 21);
  CHECK(ad == 10);

  srb_env* e = nullptr;
  REQUIRE(srb_env_create(c, 7, &e) == SRB_OK);
  CHECK(srb_env_obs_dim(e) == od);
  std::vector<double> obs(od), act(ad);
  REQUIRE(srb_env_reset(e, 0.0, obs.data(), od) == SRB_OK);
  CHECK(srb_env_reset(e, 0.0, obs.data(), od - 1) == SRB_ERROR_ARGUMENT);
  srb_step_result s{};
  double t = 0.0;
  for (int k = 0; k < 30; ++k) {
    REQUIRE(srb_controller_act(c, obs.data(), od, act.data(), ad) == SRB_OK);
    REQUIRE(srb_env_step(e, act.data(), ad, &s, obs.data(), od) == SRB_OK);
    CHECK(s.time > t);
    t = s.time;
    if (s.terminated) break;
  }
  CHECK(s.com[1] > 0.0);
  CHECK(srb_env_step(e, act.data(), ad - 1, &s, obs.data(), od) == SRB_ERROR_ARGUMENT);
  CHECK(srb_controller_act(c, obs.data(), od + 1, act.data(), ad) == SRB_ERROR_ARGUMENT);
  srb_env_free(e);
  srb_controller_free(c);
  srb_controller_free(nullptr);
  srb_env_free(nullptr);
  srb_report_free(nullptr);
}

TEST_CASE("rollout report") {
  const std::string ckpt = trained_checkpoint();
  const std::string cfg = R"({"controller": ")" + ckpt + R"(", "rollout": {"duration": 0.5}})";
  const std::string out = kDir + "/rollout";
  srb_run_options o;
  srb_run_options_init(&o);
  o.out_dir = out.c_str();
  srb_report* r = nullptr;
  REQUIRE(srb_run_command("rollout", cfg.c_str(), &o, &r) == SRB_OK);
  CHECK(srb_report_output_count(r) == 2);
  CHECK(fs::exists(srb_report_output(r, 1)));
  CHECK(srb_report_output(r, 2) == nullptr);
  CHECK(std::string(srb_report_summary(r)).find("\"fell\"") != std::string::npos);
  srb_report_free(r);
}
