#ifndef EPIDRIFT_H
#define EPIDRIFT_H

/* Generated by cbindgen from epidrift-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by fallible calls.
#define EPD_OK 0

// Invalid arguments or configuration.
#define EPD_ERR_CONFIG 2

// Numerical failure.
#define EPD_ERR_NUMERICAL 3

// Degenerate inference (e.g. the filter collapsed).
#define EPD_ERR_DEGENERATE 4

// A required pointer was null.
#define EPD_ERR_NULL 5

// PMMH output: constrained draws plus diagnostics.
typedef struct EpdChain EpdChain;

// A single-group SEIR model with its weekly grid.
typedef struct EpdModel EpdModel;

// Weekly case counts.
typedef struct EpdSeries EpdSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent error on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *epd_last_error_message(void);

// Create a single-group SEIR model handle with a BM contact-rate driver.
// `init_fracs` points at (E0, I0, R0). Returns null on invalid input
// (see `epd_last_error_message`).
//
// # Safety
// `init_fracs` must point at three readable doubles.
struct EpdModel *epd_model_new_seir(double latent_rate,
                                    double recovery_rate,
                                    double sigma,
                                    double obs_sd,
                                    double beta0,
                                    const double *init_fracs,
                                    double reporting,
                                    double population,
                                    size_t n_weeks,
                                    size_t substeps);

// Release a model handle.
//
// # Safety
// `model` must come from `epd_model_new_seir` and not be freed twice.
void epd_model_free(struct EpdModel *model);

// Simulate weekly observations from the model. Returns null on failure.
//
// # Safety
// `model` must be a live handle.
struct EpdSeries *epd_model_simulate(const struct EpdModel *model, uint64_t seed);

// Build a series handle from raw weekly counts (times in days).
//
// # Safety
// `times` and `cases` must point at `len` readable doubles each.
struct EpdSeries *epd_series_new(const double *times, const double *cases, size_t len);

// Number of observations in a series.
//
// # Safety
// `series` must be a live handle.
size_t epd_series_len(const struct EpdSeries *series);

// Observation time in days at index `i` (NaN when out of range).
//
// # Safety
// `series` must be a live handle.
double epd_series_time(const struct EpdSeries *series, size_t i);

// Case count at index `i` (NaN when out of range).
//
// # Safety
// `series` must be a live handle.
double epd_series_value(const struct EpdSeries *series, size_t i);

// Release a series handle.
//
// # Safety
// `series` must come from this library and not be freed twice.
void epd_series_free(struct EpdSeries *series);

// Particle-filter log-likelihood of the series under the model.
//
// # Safety
// All handles must be live; `out_loglik` must be writable.
int32_t epd_loglik_pf(const struct EpdModel *model,
                      const struct EpdSeries *series,
                      size_t n_particles,
                      uint64_t seed,
                      double *out_loglik);

// EKF log-likelihood of the series under the model.
//
// # Safety
// All handles must be live; `out_loglik` must be writable.
int32_t epd_loglik_ekf(const struct EpdModel *model,
                       const struct EpdSeries *series,
                       double *out_loglik);

// Run adaptive PMMH under the informative SEIR priors, starting from the
// model's parameters. Returns null on failure.
//
// # Safety
// All handles must be live.
struct EpdChain *epd_pmmh_run(const struct EpdModel *model,
                              const struct EpdSeries *series,
                              size_t n_particles,
                              size_t n_iter,
                              uint64_t seed);

// Number of stored iterations.
//
// # Safety
// `chain` must be a live handle.
size_t epd_chain_len(const struct EpdChain *chain);

// Number of sampled coordinates.
//
// # Safety
// `chain` must be a live handle.
size_t epd_chain_dim(const struct EpdChain *chain);

// Constrained value of coordinate `coord` at iteration `iter` (NaN when
// out of range).
//
// # Safety
// `chain` must be a live handle.
double epd_chain_draw(const struct EpdChain *chain, size_t iter, size_t coord);

// Post-burn-in acceptance rate.
//
// # Safety
// `chain` must be a live handle.
double epd_chain_acc_rate(const struct EpdChain *chain);

// Release a chain handle.
//
// # Safety
// `chain` must come from `epd_pmmh_run` and not be freed twice.
void epd_chain_free(struct EpdChain *chain);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EPIDRIFT_H */
