/*
 * C API of the fuselab shared library.
 *
 * A session is an opaque handle holding configuration (flat key/value pairs)
 * and the last error message. Every entry point returns a status code:
 *
 *   FL_OK      (0)  success
 *   FL_RUNTIME (1)  execution failed (see fl_last_error)
 *   FL_USAGE   (2)  bad arguments: unknown key, id, flag value, ...
 *
 * The codes double as process exit codes for the CLI.
 */
#ifndef FUSELAB_H
#define FUSELAB_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#define FL_OK 0
#define FL_RUNTIME 1
#define FL_USAGE 2

typedef struct fl_session fl_session;

fl_session* fl_session_new(void);
void fl_session_free(fl_session* s);

const char* fl_version(void);

/* Message of the last failing call on this session; empty string if none. */
const char* fl_last_error(const fl_session* s);

/* Configuration. fl_load_config_file reads flat `key = value` lines; fl_set
 * overrides single keys (explicit flags beat file values). */
int fl_set(fl_session* s, const char* key, const char* value);
int fl_load_config_file(fl_session* s, const char* path);

/* Newline-separated experiment ids. Writes up to cap bytes including the
 * terminator; *needed (optional) receives the required size. */
int fl_list_experiments(fl_session* s, char* buf, size_t cap, size_t* needed);

/* Runs one registered experiment across the configured seeds; writes the
 * result bundle under out_dir/<experiment_id>/. */
int fl_run_experiment(fl_session* s, const char* experiment_id,
                      const char* out_dir);

/* Trains one model per the session config; writes checkpoint, trace CSVs and
 * a summary under out_dir. */
int fl_train(fl_session* s, const char* out_dir);

/* Computes the diagnostics report for a (re)trained or restored model. */
int fl_diagnose(fl_session* s, const char* out_dir);

/* Masked-evaluation of substitution policies; writes per-rate CSV rows. */
int fl_substitute(fl_session* s, const char* out_dir);

/* Generates the configured synthetic dataset as per-modality CSV files. */
int fl_generate_data(fl_session* s, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* FUSELAB_H */
