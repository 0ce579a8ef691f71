#include "srblab.h"

#include <memory>
#include <new>
#include <string>

#include "srblab/commands.hpp"

using namespace srblab;

struct srb_report {
  CommandResult result;
};

struct srb_controller {
  Controller controller;
};

struct srb_env {
  Env env;
};

namespace {

thread_local std::string last_error;

srb_status fail_with(srb_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <typename F>
srb_status guarded(F&& f) {
  try {
    f();
    last_error.clear();
    return SRB_OK;
  } catch (const ConfigError& e) {
    return fail_with(SRB_ERROR_CONFIG, e.what());
  } catch (const Error& e) {
    return fail_with(SRB_ERROR_RUNTIME, e.what());
  } catch (const std::bad_alloc&) {
    return fail_with(SRB_ERROR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail_with(SRB_ERROR_RUNTIME, e.what());
  } catch (...) {
    return fail_with(SRB_ERROR_RUNTIME, "unknown failure");
  }
}

srb_status bad_argument(const char* message) { return fail_with(SRB_ERROR_ARGUMENT, message); }

void copy_out(const VecX& v, double* out) {
  for (int i = 0; i < v.size(); ++i) out[i] = v[i];
}

}  // namespace

extern "C" {

SRB_API const char* srb_version(void) { return "1.0.0"; }

SRB_API const char* srb_last_error(void) { return last_error.c_str(); }

SRB_API int srb_command_count(void) { return static_cast<int>(command_names().size()); }

SRB_API const char* srb_command_name(int index) {
  if (index < 0 || index >= srb_command_count()) return nullptr;
  return command_names()[index].c_str();
}

SRB_API void srb_run_options_init(srb_run_options* options) {
  if (!options) return;
  options->seed = 0;
  options->threads = 1;
  options->out_dir = nullptr;
  options->base_dir = nullptr;
}

SRB_API srb_status srb_run_command(const char* command, const char* config_json, const srb_run_options* options,
                                   srb_report** report) {
  if (!command || !report) return bad_argument("srb_run_command: command and report must not be NULL");
  *report = nullptr;
  CommandOptions o;
  if (options) {
    o.seed = options->seed;
    o.threads = options->threads;
    if (options->out_dir) o.out_dir = options->out_dir;
    if (options->base_dir) o.base_dir = options->base_dir;
  }
  return guarded([&] {
    auto r = std::make_unique<srb_report>();
    r->result = run_command(command, config_json ? config_json : "", o);
    *report = r.release();
  });
}

SRB_API const char* srb_report_summary(const srb_report* report) {
  return report ? report->result.summary.c_str() : nullptr;
}

SRB_API int srb_report_fell(const srb_report* report) { return report && report->result.fell ? 1 : 0; }

SRB_API int srb_report_output_count(const srb_report* report) {
  return report ? static_cast<int>(report->result.outputs.size()) : 0;
}

SRB_API const char* srb_report_output(const srb_report* report, int index) {
  if (!report || index < 0 || index >= srb_report_output_count(report)) return nullptr;
  return report->result.outputs[index].c_str();
}

SRB_API void srb_report_free(srb_report* report) { delete report; }

SRB_API srb_status srb_controller_load(const char* path, srb_controller** controller) {
  if (!path || !controller) return bad_argument("srb_controller_load: path and controller must not be NULL");
  *controller = nullptr;
  return guarded([&] { *controller = new srb_controller{load_controller(path)}; });
}

SRB_API void srb_controller_free(srb_controller* controller) { delete controller; }

SRB_API int srb_controller_obs_dim(const srb_controller* controller) {
  return controller ? controller->controller.obs_dim() : 0;
}

SRB_API int srb_controller_act_dim(const srb_controller* controller) {
  return controller ? controller->controller.policy->act_dim() : 0;
}

SRB_API srb_status srb_controller_act(const srb_controller* controller, const double* obs, int obs_len, double* action,
                                      int act_len) {
  if (!controller || !obs || !action) return bad_argument("srb_controller_act: NULL argument");
  const PolicyCheckpoint& p = *controller->controller.policy;
  if (obs_len != p.obs_dim() || act_len != p.act_dim())
    return bad_argument("srb_controller_act: buffer lengths do not match the policy dimensions");
  return guarded([&] { copy_out(p.act(Eigen::Map<const VecX>(obs, obs_len)), action); });
}

SRB_API srb_status srb_env_create(const srb_controller* controller, uint64_t seed, srb_env** env) {
  if (!controller || !env) return bad_argument("srb_env_create: NULL argument");
  *env = nullptr;
  return guarded([&] {
    RolloutOptions o;
    o.seed = seed;
    o.duration = controller->controller.env.episode_cap;
    *env = new srb_env{make_rollout_env(controller->controller, o)};
  });
}

SRB_API void srb_env_free(srb_env* env) { delete env; }

SRB_API int srb_env_obs_dim(const srb_env* env) { return env ? env->env.obs_dim() : 0; }

SRB_API srb_status srb_env_reset(srb_env* env, double psi, double* obs, int obs_len) {
  if (!env) return bad_argument("srb_env_reset: NULL environment");
  if (obs && obs_len != env->env.obs_dim()) return bad_argument("srb_env_reset: observation buffer has the wrong length");
  return guarded([&] {
    const VecX o = env->env.reset_at(psi);
    if (obs) copy_out(o, obs);
  });
}

SRB_API srb_status srb_env_step(srb_env* env, const double* action, int act_len, srb_step_result* result, double* obs,
                                int obs_len) {
  if (!env || !action) return bad_argument("srb_env_step: NULL argument");
  if (act_len != env->env.act_dim()) return bad_argument("srb_env_step: action buffer has the wrong length");
  if (obs && obs_len != env->env.obs_dim()) return bad_argument("srb_env_step: observation buffer has the wrong length");
  return guarded([&] {
    const EnvStep st = env->env.step(Eigen::Map<const VecX>(action, act_len));
    if (obs) copy_out(st.obs, obs);
    if (result) {
      result->reward = st.reward;
      result->time = env->env.state().time;
      for (int i = 0; i < 3; ++i) result->com[i] = env->env.state().T.p()[i];
      result->terminated = st.terminated ? 1 : 0;
      result->truncated = st.truncated ? 1 : 0;
    }
  });
}

}  // extern "C"
