/* C interface to the distillation training library.
 *
 * Every function that can fail returns a status code:
 *   DRKD_OK          success
 *   DRKD_ERR_RUNTIME I/O or training failure (missing file, bad format,
 *                    diverged run)
 *   DRKD_ERR_CONFIG  invalid or inconsistent configuration
 * On failure, drkd_last_error() returns a message for the calling thread.
 * The codes match the CLI's exit codes.
 */
#ifndef DRKD_H
#define DRKD_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define DRKD_OK 0
#define DRKD_ERR_RUNTIME 1
#define DRKD_ERR_CONFIG 2

/* Library version, e.g. "0.1.0". */
const char* drkd_version(void);

/* Message for the most recent failure on this thread; never NULL. */
const char* drkd_last_error(void);

/* Receives one human-readable progress line per call. */
typedef void (*drkd_log_fn)(const char* line, void* user);

/* A configured training run (one config file, one output directory). */
typedef struct drkd_run drkd_run;

/* Parses and validates a run config file. On success *out owns the run
 * and must be released with drkd_run_close. */
int drkd_run_open(const char* config_path, drkd_run** out);
void drkd_run_close(drkd_run* run);

/* The run's framework name: "baseline", "lsr", "normal_kd", "tfkd_self"
 * or "drkd". */
const char* drkd_run_framework(const drkd_run* run);

/* Override config values before training. */
int drkd_run_set_seed(drkd_run* run, uint64_t seed);
int drkd_run_set_output_dir(drkd_run* run, const char* dir);
int drkd_run_set_log(drkd_run* run, drkd_log_fn fn, void* user);

/* Trains per the config (plain training or distillation, depending on the
 * framework) and writes checkpoint.bin and metrics.csv into the output
 * directory. */
int drkd_run_train(drkd_run* run);

/* Accuracy of a saved checkpoint on the "train" or "test" split of the
 * dataset described by the config file. */
int drkd_evaluate(const char* checkpoint_path, const char* config_path,
                  const char* split, double* out_accuracy);

/* Runs (or resumes) every cell of an experiment manifest and writes
 * report.json and report.md. out_dir overrides the manifest's output
 * directory when non-NULL; seed, when non-NULL, replaces the manifest's
 * seed list with that single seed. */
int drkd_compare(const char* manifest_path, const char* out_dir,
                 const uint64_t* seed, drkd_log_fn log, void* user);

/* Merges metrics CSVs into out_dir/metrics_long.csv and renders
 * out_dir/accuracy.svg (one polyline per input). */
int drkd_report(const char* const* metrics_paths, size_t count,
                const char* out_dir, drkd_log_fn log, void* user);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* DRKD_H */
