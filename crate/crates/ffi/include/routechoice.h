#ifndef ROUTECHOICE_H
#define ROUTECHOICE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum RcStatus {
  RC_STATUS_OK = 0,
  // Null pointer, bad UTF-8, or a buffer of the wrong size.
  RC_STATUS_INVALID_ARGUMENT = 1,
  RC_STATUS_CONFIG = 2,
  RC_STATUS_DATA = 3,
  RC_STATUS_NUMERICAL = 4,
  // The library panicked; the handle involved should be freed.
  RC_STATUS_INTERNAL = 5,
} RcStatus;

typedef enum RcDcmKind {
  RC_DCM_KIND_MNL = 0,
  RC_DCM_KIND_PSL = 1,
} RcDcmKind;

// Observations read from a dataset directory, with default transforms.
typedef struct RcDataset RcDataset;

// An estimated MNL or PSL model.
typedef struct RcDcmFit RcDcmFit;

// A neural utility model restored from a checkpoint.
typedef struct RcModel RcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Valid until the
// next failing call on this thread.
const char *rc_last_error(void);

// Library version as a static string.
const char *rc_version(void);

// Read `network.json` and `observations.jsonl` from `dir`.
//
// # Safety
// `dir` must be a nul-terminated string; `out` must be writable.
enum RcStatus rc_dataset_load(const char *dir, struct RcDataset **out);

// Number of observations.
//
// # Safety
// `data` must be a live handle or null (which yields 0).
size_t rc_dataset_len(const struct RcDataset *data);

// # Safety
// `data` must come from [`rc_dataset_load`] and not be used afterwards.
void rc_dataset_free(struct RcDataset *data);

// Estimate an MNL or PSL model (fare coefficient fixed at −1) on every
// observation of `data`.
//
// # Safety
// `data` must be a live handle; `out` must be writable.
enum RcStatus rc_fit_dcm(const struct RcDataset *data, enum RcDcmKind kind, struct RcDcmFit **out);

// Number of coefficients: 4 for MNL (IVTT, Fare, WT, NoT), 5 for PSL
// (path size last).
//
// # Safety
// `fit` must be a live handle or null (which yields 0).
size_t rc_dcm_len(const struct RcDcmFit *fit);

// Copy estimates, standard errors and t-statistics into buffers of
// `len >= rc_dcm_len(fit)` entries. Any of the three may be null. Fixed
// coefficients report a zero standard error and a NaN t-statistic.
//
// # Safety
// Non-null buffers must hold `len` doubles.
enum RcStatus rc_dcm_coefficients(const struct RcDcmFit *fit,
                                  double *estimates,
                                  double *std_errors,
                                  double *t_stats,
                                  size_t len);

// Maximised log-likelihood.
//
// # Safety
// `fit` must be a live handle or null (which yields NaN).
double rc_dcm_log_likelihood(const struct RcDcmFit *fit);

// # Safety
// `fit` must come from [`rc_fit_dcm`] and not be used afterwards.
void rc_dcm_free(struct RcDcmFit *fit);

// Restore a neural model from a checkpoint file.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum RcStatus rc_model_load(const char *path, struct RcModel **out);

// Input width (4 or 97 columns).
//
// # Safety
// `model` must be a live handle or null (which yields 0).
size_t rc_model_feature_dim(const struct RcModel *model);

// Utility parameters, fixed entries included.
//
// # Safety
// `model` must be a live handle or null (which yields 0).
size_t rc_model_parameter_count(const struct RcModel *model);

// The four policy coefficients (IVTT, Fare, WT, NoT).
//
// # Safety
// `out` must hold `len >= 4` doubles.
enum RcStatus rc_model_policy_betas(const struct RcModel *model, double *out, size_t len);

// Utilities of the alternatives of one choice set. `rows` is row-major,
// `n_rows x rc_model_feature_dim(model)`, in transformed feature units;
// `out` receives `n_rows` values.
//
// # Safety
// `rows` must hold `n_rows * n_cols` doubles and `out` `n_rows` doubles.
enum RcStatus rc_model_utilities(const struct RcModel *model,
                                 const double *rows,
                                 size_t n_rows,
                                 size_t n_cols,
                                 double *out);

// # Safety
// `model` must come from [`rc_model_load`] and not be used afterwards.
void rc_model_free(struct RcModel *model);

// Run the whole pipeline for a TOML config. `run_dir` may be null to use
// the config's output directory; the dataset must already exist in
// `<run_dir>/data`.
//
// # Safety
// `config_path` (and `run_dir` if non-null) must be nul-terminated strings.
enum RcStatus rc_run_pipeline(const char *config_path, const char *run_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROUTECHOICE_H */
