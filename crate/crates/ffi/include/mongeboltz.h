#ifndef MONGEBOLTZ_H
#define MONGEBOLTZ_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MB_FFI_API_VERSION 1

typedef enum MbStatus {
  MB_OK = 0,
  MB_ERR_NULL_POINTER = 1,
  MB_ERR_INVALID_INPUT = 2,
  MB_ERR_SIZE_LIMIT = 3,
  MB_ERR_NUMERICAL = 4,
  MB_ERR_IO = 5,
  MB_ERR_PANIC = 6,
} MbStatus;

// Effective Hamiltonian of block-majority coarse-graining.
typedef struct MbEffectiveTable MbEffectiveTable;

// Exact Boltzmann table of a small Ising lattice.
typedef struct MbExactTable MbExactTable;

// Restricted Boltzmann machine parameters.
typedef struct MbRbm MbRbm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *mb_version(void);

// Message for the last failed call on this thread, or null. The pointer is
// valid until the next call into the library from the same thread.
const char *mb_last_error_message(void);

// Energy of a `rows x cols` configuration of `+1/-1` spins.
//
// # Safety
// `spins` must point to `n_spins` readable values and `out_energy` must be
// writable.
enum MbStatus mb_ising_hamiltonian(size_t rows,
                                   size_t cols,
                                   int periodic,
                                   double coupling,
                                   const int8_t *spins,
                                   size_t n_spins,
                                   double *out_energy);

// Enumerate all configurations of a lattice with at most 20 sites.
//
// # Safety
// `out_table` must be writable. The handle it receives must be released
// with [`mb_exact_table_free`].
enum MbStatus mb_ising_exact_enumerate(size_t rows,
                                       size_t cols,
                                       int periodic,
                                       double coupling,
                                       double beta,
                                       struct MbExactTable **out_table);

// # Safety
// `table` must be null or a handle from [`mb_ising_exact_enumerate`] not yet
// freed.
void mb_exact_table_free(struct MbExactTable *table);

// Number of configurations, `2^sites`.
//
// # Safety
// `table` must be a live handle and `out_len` writable.
enum MbStatus mb_exact_table_len(const struct MbExactTable *table, size_t *out_len);

// `ln Z` of the enumerated table.
//
// # Safety
// `table` must be a live handle and `out_log_z` writable.
enum MbStatus mb_ising_partition(const struct MbExactTable *table, double *out_log_z);

// Energy and probability of the configuration with the given index.
//
// # Safety
// `table` must be a live handle. Either out-pointer may be null.
enum MbStatus mb_exact_table_entry(const struct MbExactTable *table,
                                   uint64_t index,
                                   double *out_energy,
                                   double *out_probability);

// Build a model from row-major `n_visible x n_hidden` weights and biases.
//
// # Safety
// The arrays must hold `n_visible * n_hidden`, `n_visible` and `n_hidden`
// values. `out_model` must be writable.
enum MbStatus mb_rbm_new(size_t n_visible,
                         size_t n_hidden,
                         const double *weights,
                         const double *visible_bias,
                         const double *hidden_bias,
                         struct MbRbm **out_model);

// Load a JSON checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string and `out_model` writable.
enum MbStatus mb_rbm_load(const char *path, struct MbRbm **out_model);

// Save the model as a JSON checkpoint without training metadata.
//
// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum MbStatus mb_rbm_save(const struct MbRbm *model, const char *path);

// # Safety
// `model` must be null or a live handle.
void mb_rbm_free(struct MbRbm *model);

// # Safety
// `model` must be a live handle. Either out-pointer may be null.
enum MbStatus mb_rbm_dims(const struct MbRbm *model, size_t *out_visible, size_t *out_hidden);

// Free energy `F(v)` of a `+1/-1` visible vector.
//
// # Safety
// `model` must be a live handle, `v` must hold `n` values and
// `out_free_energy` must be writable.
enum MbStatus mb_rbm_free_energy(const struct MbRbm *model,
                                 const int8_t *v,
                                 size_t n,
                                 double *out_free_energy);

// Exact marginal `p(v)`, for at most 20 visible units.
//
// # Safety
// As for [`mb_rbm_free_energy`].
enum MbStatus mb_rbm_marginal(const struct MbRbm *model,
                              const int8_t *v,
                              size_t n,
                              double *out_probability);

// Effective Hamiltonian of an `side x side` lattice under `block x block`
// majority. `tie_minus_one` selects the tie rule, otherwise ties go to +1.
//
// # Safety
// `out_table` must be writable.
enum MbStatus mb_effective_hamiltonian(size_t side,
                                       size_t block,
                                       int periodic,
                                       int tie_minus_one,
                                       double coupling,
                                       double beta,
                                       struct MbEffectiveTable **out_table);

// # Safety
// `table` must be null or a live handle.
void mb_effective_table_free(struct MbEffectiveTable *table);

// Number of macro configurations.
//
// # Safety
// `table` must be a live handle and `out_len` writable.
enum MbStatus mb_effective_table_len(const struct MbEffectiveTable *table, size_t *out_len);

// `H_eff`, fiber size and `ln` of the fiber size for one macro index.
//
// # Safety
// `table` must be a live handle. Any out-pointer may be null.
enum MbStatus mb_effective_table_entry(const struct MbEffectiveTable *table,
                                       uint64_t index,
                                       double *out_h_eff,
                                       uint64_t *out_multiplicity,
                                       double *out_entropy);

// `ln Z_eff` over macro configurations.
//
// # Safety
// `table` must be a live handle and `out_log_z` writable.
enum MbStatus mb_effective_table_log_partition(const struct MbEffectiveTable *table,
                                               double *out_log_z);

// Membership of an `n x n` matrix in the cone of covariances reachable from
// `m` latent dimensions.
//
// # Safety
// `sigma` must hold `n * n` values. Any out-pointer may be null.
enum MbStatus mb_wishart_cone_membership(const double *sigma,
                                         size_t n,
                                         size_t m,
                                         int *out_member,
                                         double *out_min_eigenvalue,
                                         size_t *out_rank);

// 2-Wasserstein distance between centered Gaussians with SPD covariances.
//
// # Safety
// `sigma0` and `sigma1` must hold `d * d` values; `out_w2` must be writable.
enum MbStatus mb_w2_gaussian(const double *sigma0, const double *sigma1, size_t d, double *out_w2);

// Matrix `A` of the optimal map `x -> A x` between centered Gaussians,
// written row-major into `out_a`.
//
// # Safety
// `sigma0` and `sigma1` must hold `d * d` values; `out_a` must have room for
// `d * d` values.
enum MbStatus mb_gaussian_ot_map(const double *sigma0,
                                 const double *sigma1,
                                 size_t d,
                                 double *out_a);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MONGEBOLTZ_H */
