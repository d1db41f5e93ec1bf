/* C interface to the ltx toolkit: learning to reject low-quality explanations.
 *
 * Every function returning ltx_status reports failures through its return
 * value; ltx_last_error() then describes the most recent failure on the
 * calling thread. Handles are opaque and must be released with the matching
 * *_free function. Fitted handles are immutable and may be shared across
 * threads for read-only calls. */
#ifndef LTX_LTX_H
#define LTX_LTX_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(LTX_BUILDING_LIBRARY)
#define LTX_API __declspec(dllexport)
#else
#define LTX_API __declspec(dllimport)
#endif
#else
#define LTX_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ltx_status {
    LTX_OK = 0,
    LTX_ERR_INVALID_ARGUMENT = 1,
    LTX_ERR_IO = 2,
    LTX_ERR_PARSE = 3,
    LTX_ERR_NUMERIC = 4,
    LTX_ERR_CONFIG = 5,
    LTX_ERR_STATE = 6,
    LTX_ERR_INTERNAL = 7
} ltx_status;

typedef enum ltx_task { LTX_CLASSIFICATION = 0, LTX_REGRESSION = 1 } ltx_task;

typedef struct ltx_dataset ltx_dataset;
typedef struct ltx_predictor ltx_predictor;
typedef struct ltx_rejector ltx_rejector;

typedef void (*ltx_log_fn)(const char* line, void* user);

LTX_API const char* ltx_version(void);
/* Message of the last failure on this thread; "" if none. Valid until the
 * next ltx call on the same thread. */
LTX_API const char* ltx_last_error(void);
LTX_API const char* ltx_status_string(ltx_status status);

/* ---- datasets ---------------------------------------------------------- */

LTX_API ltx_status ltx_dataset_synthetic(size_t n, size_t d, ltx_task task, double mismatch_strength, uint64_t seed,
                                         ltx_dataset** out);
LTX_API ltx_status ltx_dataset_load_csv(const char* path, const char* target_column, ltx_task task, ltx_dataset** out);
/* Writes features then the target column; preamble lines (may be NULL) are
 * prefixed with '#'. */
LTX_API ltx_status ltx_dataset_write_csv(const ltx_dataset* ds, const char* path, const char* target_column,
                                         const char* preamble);
LTX_API size_t ltx_dataset_rows(const ltx_dataset* ds);
LTX_API size_t ltx_dataset_cols(const ltx_dataset* ds);
/* Copies row `row` into out[0..len); len must equal the column count. */
LTX_API ltx_status ltx_dataset_row(const ltx_dataset* ds, size_t row, double* out, size_t len);
LTX_API ltx_status ltx_dataset_target(const ltx_dataset* ds, size_t row, double* out);
LTX_API void ltx_dataset_free(ltx_dataset* ds);

/* Generates a synthetic dataset and writes it to csv_path, plus a JSON
 * provenance record (spec and seed) to json_path when it is not NULL. */
LTX_API ltx_status ltx_synth_write(size_t n, size_t d, ltx_task task, double mismatch_strength, uint64_t seed,
                                   const char* csv_path, const char* json_path);

/* ---- predictors -------------------------------------------------------- */

/* kind: "linear_regression", "logistic_regression", "kernel_ridge",
 * "kernel_logistic". bandwidth <= 0 selects the median-distance default. */
LTX_API ltx_status ltx_predictor_fit(const ltx_dataset* ds, const char* kind, double l2, double bandwidth, uint64_t seed,
                                     ltx_predictor** out);
LTX_API ltx_status ltx_predictor_predict(const ltx_predictor* p, const double* x, size_t d, double* out);
LTX_API ltx_status ltx_predictor_save(const ltx_predictor* p, const char* path);
LTX_API ltx_status ltx_predictor_load(const char* path, ltx_predictor** out);
LTX_API void ltx_predictor_free(ltx_predictor* p);

/* ---- explanations ------------------------------------------------------ */

/* KernelSHAP explanation of one instance. relevance_out holds d values. */
LTX_API ltx_status ltx_explain(const ltx_predictor* p, const double* x, size_t d, const ltx_dataset* background,
                               size_t n_samples, size_t background_cap, uint64_t seed, double* relevance_out,
                               double* base_value_out);
/* Explains every row of `data` and writes an explanations CSV
 * (instance_id = row index). */
LTX_API ltx_status ltx_explain_dataset(const ltx_predictor* p, const ltx_dataset* data, const ltx_dataset* background,
                                       size_t n_samples, size_t background_cap, uint64_t seed, size_t threads,
                                       const char* out_csv);

/* ---- human annotations ------------------------------------------------- */

/* Aggregates annotations into judged explanations (CSV) and writes the
 * exclusion report (JSON). */
LTX_API ltx_status ltx_ingest_annotations(const char* annotations_csv, const char* explanations_csv,
                                          const char* judged_out_csv, const char* report_out_json);

/* ---- rejectors --------------------------------------------------------- */

/* Fits a rejector that needs only explanations (ULER, ULER_NoAug, RandRej,
 * NovRejZ, ComplRej, PASTARejLite) on a judged explanations CSV.
 * params_json may be NULL or an object with any of: kernel, C, k, epsilon0,
 * k_nn, l2, seed, sigma_as_variance. */
LTX_API ltx_status ltx_rejector_fit(const char* kind, const char* judged_csv, const char* params_json,
                                    ltx_rejector** out);
/* Higher scores mean better explanations. instance_id may be NULL. */
LTX_API ltx_status ltx_rejector_score(const ltx_rejector* r, const double* z, size_t d, const char* instance_id,
                                      double* out);

typedef enum ltx_calibration {
    LTX_TARGET_RATE = 0,
    /* rate is the low-quality fraction of the training set */
    LTX_MATCH_TRAIN_LOW_QUALITY = 1
} ltx_calibration;

LTX_API ltx_status ltx_rejector_calibrate(ltx_rejector* r, const double* val_scores, size_t n, ltx_calibration strategy,
                                          double rate);
LTX_API ltx_status ltx_rejector_threshold(const ltx_rejector* r, double* out);
/* rejected_out is set to 1 iff score < threshold. */
LTX_API ltx_status ltx_rejector_decide(const ltx_rejector* r, const double* z, size_t d, const char* instance_id,
                                       int* rejected_out, double* score_out);
LTX_API ltx_status ltx_rejector_save(const ltx_rejector* r, const char* path);
LTX_API ltx_status ltx_rejector_load(const char* path, ltx_rejector** out);
LTX_API void ltx_rejector_free(ltx_rejector* r);

/* Deployment calibration in one step: fit on train_csv, score val_csv,
 * calibrate, save the model JSON. For LTX_MATCH_TRAIN_LOW_QUALITY `rate`
 * is ignored. The threshold is returned through tau_out (may be NULL). */
LTX_API ltx_status ltx_calibrate(const char* kind, const char* train_csv, const char* val_csv, const char* params_json,
                                 ltx_calibration strategy, double rate, const char* model_out, double* tau_out);

/* ---- experiments ------------------------------------------------------- */

/* Runs the benchmark described by the JSON config at config_path and writes
 * results.csv, curves.csv and summary.json into out_dir. overrides_json
 * (may be NULL) is merged into the config before validation. */
LTX_API ltx_status ltx_run_experiment(const char* config_path, const char* overrides_json, const char* out_dir,
                                      ltx_log_fn log, void* user);

#ifdef __cplusplus
}
#endif

#endif
