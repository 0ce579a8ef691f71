#ifndef SRBLAB_H
#define SRBLAB_H

#include <stdint.h>

#if defined(_WIN32)
#define SRB_API __declspec(dllexport)
#else
#define SRB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes match the command-line exit codes where they overlap. */
typedef enum srb_status {
  SRB_OK = 0,
  SRB_ERROR_RUNTIME = 1,
  SRB_ERROR_CONFIG = 2,
  SRB_ERROR_ARGUMENT = 3
} srb_status;

SRB_API const char* srb_version(void);
/* Message of the last failure on the calling thread; empty after a success. */
SRB_API const char* srb_last_error(void);

/* Harness commands: train, rollout, push, box, terrain, deltas, mmik, transition. */
SRB_API int srb_command_count(void);
SRB_API const char* srb_command_name(int index);

typedef struct srb_run_options {
  uint64_t seed;
  int threads;
  const char* out_dir;  /* NULL: current directory */
  const char* base_dir; /* relative config paths resolve here; NULL: current directory */
} srb_run_options;

SRB_API void srb_run_options_init(srb_run_options* options);

typedef struct srb_report srb_report;

/* Runs one command from JSON config text. On success *report must be released with
   srb_report_free. */
SRB_API srb_status srb_run_command(const char* command, const char* config_json, const srb_run_options* options,
                                   srb_report** report);
/* JSON object with the command's summary numbers. */
SRB_API const char* srb_report_summary(const srb_report* report);
/* Nonzero when a rollout-style command ended with the character falling. */
SRB_API int srb_report_fell(const srb_report* report);
SRB_API int srb_report_output_count(const srb_report* report);
SRB_API const char* srb_report_output(const srb_report* report, int index);
SRB_API void srb_report_free(srb_report* report);

/* Trained controller: a checkpoint file or a controller descriptor. */
typedef struct srb_controller srb_controller;

SRB_API srb_status srb_controller_load(const char* path, srb_controller** controller);
SRB_API void srb_controller_free(srb_controller* controller);
SRB_API int srb_controller_obs_dim(const srb_controller* controller);
SRB_API int srb_controller_act_dim(const srb_controller* controller);
/* Mean action of the policy. */
SRB_API srb_status srb_controller_act(const srb_controller* controller, const double* obs, int obs_len, double* action,
                                      int act_len);

/* Simulation environment built from a controller's training settings. */
typedef struct srb_env srb_env;

typedef struct srb_step_result {
  double reward;
  double time;
  double com[3];
  int terminated;
  int truncated;
} srb_step_result;

SRB_API srb_status srb_env_create(const srb_controller* controller, uint64_t seed, srb_env** env);
SRB_API void srb_env_free(srb_env* env);
SRB_API int srb_env_obs_dim(const srb_env* env);
/* Reference-state initialization at phase psi; writes the first observation. */
SRB_API srb_status srb_env_reset(srb_env* env, double psi, double* obs, int obs_len);
SRB_API srb_status srb_env_step(srb_env* env, const double* action, int act_len, srb_step_result* result, double* obs,
                                int obs_len);

#ifdef __cplusplus
}
#endif

#endif
