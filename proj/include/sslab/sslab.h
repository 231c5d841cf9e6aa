#ifndef SSLAB_H
#define SSLAB_H

/* C interface to the state-source laboratory. Every call returns an
 * sslab_status; on failure sslab_last_error() describes the cause for the
 * calling thread. Strings returned through char** are owned by the caller and
 * released with sslab_string_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(__GNUC__)
#define SSLAB_API __attribute__((visibility("default")))
#else
#define SSLAB_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sslab_status {
  SSLAB_OK = 0,
  SSLAB_E_INVALID_ARGUMENT = 1,
  SSLAB_E_INVALID_TOKEN = 2,
  SSLAB_E_INVALID_SIGNAL = 3,
  SSLAB_E_INVALID_PAIRING = 4,
  SSLAB_E_NUMERIC_FAULT = 5,
  SSLAB_E_CORRUPT_CHECKPOINT = 6,
  SSLAB_E_MISCONFIGURATION = 7,
  SSLAB_E_IO = 8,
  SSLAB_E_PRETRAIN_FAILURE = 9,
  SSLAB_E_RATIO_UNDEFINED = 10,
  SSLAB_E_BUSY = 11,
  SSLAB_E_INTERNAL = 12
} sslab_status;

typedef struct sslab_run sslab_run;
typedef struct sslab_policy sslab_policy;

/* Message of the last failed call on this thread; "" when none. */
SSLAB_API const char* sslab_last_error(void);
SSLAB_API const char* sslab_status_name(sslab_status status);
SSLAB_API void sslab_string_free(char* s);

/* Run handles hold a pipeline configuration. config_path may be NULL for the
 * built-in defaults. */
SSLAB_API sslab_status sslab_run_create(const char* config_path, sslab_run** out);
SSLAB_API void sslab_run_destroy(sslab_run* run);
SSLAB_API sslab_status sslab_run_set_seed(sslab_run* run, uint64_t seed);
SSLAB_API sslab_status sslab_run_set_workdir(sslab_run* run, const char* workdir);
/* Progress lines go to stderr when verbose is non-zero. */
SSLAB_API sslab_status sslab_run_set_verbose(sslab_run* run, int verbose);
SSLAB_API sslab_status sslab_run_config_json(const sslab_run* run, char** out_json);

/* Builds <workdir>/base; out_json receives the base scores. */
SSLAB_API sslab_status sslab_run_pretrain(sslab_run* run, char** out_json);
/* Trains one preset or configured stage. NULL init uses the base checkpoint,
 * NULL teacher uses the stage's teacher stage, NULL out_dir uses
 * <workdir>/<name>. */
SSLAB_API sslab_status sslab_run_train(sslab_run* run, const char* name, const char* init_ckpt,
                                       const char* teacher_ckpt, const char* out_dir, char** out_json);
/* Scores of a checkpoint on every task with the run's eval settings. */
SSLAB_API sslab_status sslab_run_eval(const sslab_run* run, const char* ckpt, char** out_json);
/* Rebuilds report.csv / report.json from the work directory; out_json names
 * both files. */
SSLAB_API sslab_status sslab_run_report(sslab_run* run, char** out_json);
/* Full pipeline; out_json summarises stages and report paths. */
SSLAB_API sslab_status sslab_run_replicate(sslab_run* run, char** out_json);

/* Drift between two state-sample files with the run's featurizer settings. */
SSLAB_API sslab_status sslab_run_drift_files(const sslab_run* run, const char* a_path, const char* b_path,
                                             char** out_json);

SSLAB_API sslab_status sslab_policy_load(const char* ckpt, sslab_policy** out);
SSLAB_API void sslab_policy_destroy(sslab_policy* policy);
SSLAB_API sslab_status sslab_policy_param_count(const sslab_policy* policy, size_t* out);
/* Exact-match score on n eval-split examples of task, greedy decoding. */
SSLAB_API sslab_status sslab_policy_score(const sslab_policy* policy, const char* task, size_t n, uint64_t seed,
                                          double* out);
/* Greedy completion of a prompt written in the vocabulary's symbols. */
SSLAB_API sslab_status sslab_policy_generate(const sslab_policy* policy, const char* prompt, char** out_text);

/* Mean forgetting and mean retention ratio over n task scores. */
SSLAB_API sslab_status sslab_retention(const double* base, const double* post, size_t n,
                                       double* mean_forgetting, double* mean_retention);

#ifdef __cplusplus
}
#endif

#endif
