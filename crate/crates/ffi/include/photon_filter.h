#ifndef PHOTON_FILTER_H
#define PHOTON_FILTER_H

#include <stddef.h>
#include <stdint.h>

typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_POINTER = 1,
  PF_STATUS_VALIDATION = 2,
  PF_STATUS_NUMERICAL = 3,
  PF_STATUS_IO = 4,
  // Index or buffer length out of range.
  PF_STATUS_RANGE = 5,
  PF_STATUS_PANIC = 6,
} PfStatus;

// Resolved run configuration.
typedef struct PfConfig PfConfig;

// Finished ensemble (or master-equation) run.
typedef struct PfEnsemble PfEnsemble;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread.
// The pointer stays valid until the next failing call on the same thread.
const char *pf_last_error_message(void);

// Mean photon number of the single-mode cavity driven by the exponential pulse.
//
// # Safety
// `out` must be null or point to writable memory for one `double`.
enum PfStatus pf_closed_form_n11(double gamma, double kappa, double t, double t0, double *out);

// Parses a TOML configuration with the same keys as the command line.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be writable.
enum PfStatus pf_config_from_toml(const char *toml, struct PfConfig **out);

// Writes the 64-character content hash and a terminating NUL into `buf`.
//
// # Safety
// `cfg` must come from [`pf_config_from_toml`]; `buf` must hold `len` bytes.
enum PfStatus pf_config_hash(const struct PfConfig *cfg, char *buf, size_t len);

// # Safety
// `cfg` must be null or come from [`pf_config_from_toml`], freed once.
void pf_config_free(struct PfConfig *cfg);

// Runs the configured experiment to completion.
//
// # Safety
// `cfg` must come from [`pf_config_from_toml`]; `out` must be writable.
enum PfStatus pf_ensemble_run(const struct PfConfig *cfg, struct PfEnsemble **out);

// Number of sampled times; zero when trajectories stop at their first click.
//
// # Safety
// `e` must be null or a live ensemble handle.
size_t pf_ensemble_samples(const struct PfEnsemble *e);

// Number of averaged columns.
//
// # Safety
// `e` must be null or a live ensemble handle.
size_t pf_ensemble_columns(const struct PfEnsemble *e);

// Name of column `c`, owned by the handle; null when out of range.
//
// # Safety
// `e` must be null or a live ensemble handle.
const char *pf_ensemble_column_name(const struct PfEnsemble *e, size_t c);

// # Safety
// `e` must be a live ensemble handle; `buf` must hold `len` doubles.
enum PfStatus pf_ensemble_times(const struct PfEnsemble *e, double *buf, size_t len);

// Ensemble mean of column `c` at every sampled time.
//
// # Safety
// `e` must be a live ensemble handle; `buf` must hold `len` doubles.
enum PfStatus pf_ensemble_mean(const struct PfEnsemble *e, size_t c, double *buf, size_t len);

// Standard error of the mean of column `c`.
//
// # Safety
// `e` must be a live ensemble handle; `buf` must hold `len` doubles.
enum PfStatus pf_ensemble_stderr(const struct PfEnsemble *e, size_t c, double *buf, size_t len);

// Trajectories with zero, one and more clicks (photodetection only).
//
// # Safety
// `e` must be a live ensemble handle; the outputs must be writable.
enum PfStatus pf_ensemble_counts(const struct PfEnsemble *e,
                                 uint64_t *zero,
                                 uint64_t *one,
                                 uint64_t *more);

// Number of failed trajectories.
//
// # Safety
// `e` must be null or a live ensemble handle.
size_t pf_ensemble_failures(const struct PfEnsemble *e);

// Writes the run's output files under `dir` in the configured format.
//
// # Safety
// `e` and `cfg` must be live handles, `e` produced from `cfg`; `dir` a
// NUL-terminated path.
enum PfStatus pf_ensemble_write(const struct PfEnsemble *e,
                                const struct PfConfig *cfg,
                                const char *dir);

// # Safety
// `e` must be null or come from [`pf_ensemble_run`], freed once.
void pf_ensemble_free(struct PfEnsemble *e);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHOTON_FILTER_H */
