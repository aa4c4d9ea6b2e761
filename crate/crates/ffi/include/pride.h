#ifndef PRIDE_H
#define PRIDE_H

/* Generated by cbindgen from the pride-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every C entry point. On anything but Ok, pride_last_error
// carries the message.
typedef enum PrideStatus {
  PRIDE_STATUS_OK = 0,
  PRIDE_STATUS_INVALID_ARGUMENT = 1,
  PRIDE_STATUS_PARSE = 2,
  PRIDE_STATUS_PROTOCOL = 3,
  PRIDE_STATUS_IO = 4,
  PRIDE_STATUS_CONFIG = 5,
  PRIDE_STATUS_INTERNAL = 6,
} PrideStatus;

// Opaque dataset handle.
typedef struct PrideDataset PrideDataset;

// Generation parameters of the confounded synthetic dataset.
typedef struct PrideSyntheticParams {
  // Side of the square feature grid; the feature count is its square.
  size_t grid_side;
  size_t rows;
  size_t n_confound_pairs;
  size_t n_signal_pcs;
  double target_snr;
  double grf_length_scale;
  uint64_t seed;
} PrideSyntheticParams;

// Fit parameters for pride_fit.
typedef struct PrideFitParams {
  // Number of parties; features are split into contiguous near-equal
  // blocks. Use 1 for a single-machine fit (no sharing).
  size_t parties;
  // Projection dimension of each communicated sketch; ignored when
  // `parties` is 1 (pass the block size or anything valid).
  size_t tau_subs;
  double lambda;
  // Privacy parameters; ignored when `no_privacy` is true.
  double epsilon;
  double delta;
  // Communicate sketches without perturbation (sigma = 0).
  bool no_privacy;
  // Logistic loss with labels in {-1, +1}; squared loss otherwise.
  bool logistic_loss;
  uint64_t master_seed;
} PrideFitParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread. The pointer
// stays valid until the next library call from the same thread.
const char *pride_last_error(void);

// Gaussian-mechanism noise level for a release with column ranges bounded
// by `theta` and projection sensitivity `w2` (1 for the SRHT).
enum PrideStatus pride_noise_sigma(double epsilon,
                                   double delta,
                                   double theta,
                                   double w2,
                                   double *out_sigma);

// Approximation-error bound. On success `out_vacuous` tells whether the
// bound is informative; the term outputs are only written when it is.
enum PrideStatus pride_error_bound(size_t rank,
                                   size_t tau_k,
                                   double sigma,
                                   double d_min,
                                   double beta_star_norm,
                                   size_t parties,
                                   double c_const,
                                   double xi,
                                   double *out_rho,
                                   double *out_term_i,
                                   double *out_term_ii,
                                   double *out_total,
                                   bool *out_vacuous);

// Draws a confounded synthetic dataset. The returned handle must be
// released with `pride_dataset_free`.
enum PrideStatus pride_dataset_synthetic(const struct PrideSyntheticParams *params,
                                         struct PrideDataset **out_dataset);

// Loads a rectangular numeric CSV with a header row; `response_column`
// names the response, every other column becomes a feature.
enum PrideStatus pride_dataset_from_csv(const char *path,
                                        const char *response_column,
                                        struct PrideDataset **out_dataset);

enum PrideStatus pride_dataset_dims(const struct PrideDataset *dataset,
                                    size_t *out_rows,
                                    size_t *out_features);

// Releases a dataset handle; null is a no-op.
void pride_dataset_free(struct PrideDataset *dataset);

// Runs the protocol on a dataset handle. The design is standardized
// internally and the recovered coefficients are returned in the original
// data units (`out_beta` must hold one value per feature). For squared
// loss the response is centered and the model carries the implied
// intercept; `out_sigma_max` (optional) receives the largest per-party
// noise level used.
enum PrideStatus pride_fit(const struct PrideDataset *dataset,
                           const struct PrideFitParams *params,
                           double *out_beta,
                           double *out_sigma_max);

// Executes a full experiment sweep from a TOML config file, with optional
// output-directory and seed overrides (`master_seed` may be null, `jobs`
// may be 0 for the default pool).
enum PrideStatus pride_run_experiment_file(const char *config_path,
                                           const char *output_dir,
                                           const uint64_t *master_seed,
                                           size_t jobs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRIDE_H */
