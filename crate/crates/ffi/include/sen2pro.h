/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SEN2PRO_H
#define SEN2PRO_H

#include <stddef.h>

// How the balance factor is chosen in [`s2p_distance`].
typedef enum S2pAlphaMode {
  // Ratio of the mean and variance l1 distances of the pair.
  S2P_ALPHA_MODE_PER_PAIR = 0,
  // The caller-supplied `alpha`.
  S2P_ALPHA_MODE_FIXED = 1,
} S2pAlphaMode;

// Result code of every fallible call.
typedef enum S2pStatus {
  S2P_STATUS_OK = 0,
  // A required pointer argument was NULL.
  S2P_STATUS_NULL_POINTER = 1,
  // A string was not valid UTF-8 or a buffer had the wrong length.
  S2P_STATUS_INVALID_ARGUMENT = 2,
  // Input rejected by the library (bad configuration, shapes, values).
  S2P_STATUS_VALIDATION = 3,
  // File, network or service failure.
  S2P_STATUS_IO = 4,
  // A Rust panic was caught at the boundary.
  S2P_STATUS_PANIC = 5,
} S2pStatus;

// Mean and diagonal variance of one sentence.
typedef struct S2pEmbedding S2pEmbedding;

// Toy transformer encoder.
typedef struct S2pEncoder S2pEncoder;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL after a
// successful call. The pointer stays valid until the next call into this
// library on the same thread.
const char *s2p_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *s2p_version(void);

// Builds an encoder from an encoder configuration in JSON (NULL for the
// defaults).
//
// # Safety
//
// `config_json` must be NULL or a NUL-terminated string; `out` must be a
// valid pointer.
enum S2pStatus s2p_encoder_new(const char *config_json, struct S2pEncoder **out);

// # Safety
//
// `encoder` must be NULL or a handle from [`s2p_encoder_new`] not yet freed.
void s2p_encoder_free(struct S2pEncoder *encoder);

// Embedding dimension, or 0 for NULL.
//
// # Safety
//
// `encoder` must be NULL or a live handle.
size_t s2p_encoder_dim(const struct S2pEncoder *encoder);

// Deterministic (dropout off) encoding of one sentence into `out`, which
// must hold exactly `s2p_encoder_dim` values.
//
// # Safety
//
// `encoder` must be a live handle, `sentence` a NUL-terminated string and
// `out` valid for `out_len` writes.
enum S2pStatus s2p_encode(const struct S2pEncoder *encoder,
                          const char *sentence,
                          double *out,
                          size_t out_len);

// Runs the full pipeline over `n` sentences with a pipeline configuration
// in JSON (NULL for the defaults). On success `out[i]` receives a new
// handle for sentence `i`.
//
// # Safety
//
// `sentences` must point to `n` NUL-terminated strings and `out` must be
// valid for `n` writes.
enum S2pStatus s2p_embed_corpus(const char *config_json,
                                const char *const *sentences,
                                size_t n,
                                struct S2pEmbedding **out);

// Builds an embedding from caller-supplied mean and variances.
//
// # Safety
//
// `mu` and `sigma_diag` must be valid for `dim` reads; `out` must be valid.
enum S2pStatus s2p_embedding_new(const double *mu,
                                 const double *sigma_diag,
                                 size_t dim,
                                 struct S2pEmbedding **out);

// # Safety
//
// `embedding` must be NULL or a live handle.
void s2p_embedding_free(struct S2pEmbedding *embedding);

// Dimension of an embedding, or 0 for NULL.
//
// # Safety
//
// `embedding` must be NULL or a live handle.
size_t s2p_embedding_dim(const struct S2pEmbedding *embedding);

// Copies the mean into `out` (exactly `dim` values).
//
// # Safety
//
// `embedding` must be a live handle and `out` valid for `out_len` writes.
enum S2pStatus s2p_embedding_mu(const struct S2pEmbedding *embedding, double *out, size_t out_len);

// Copies the diagonal variances into `out` (exactly `dim` values).
//
// # Safety
//
// `embedding` must be a live handle and `out` valid for `out_len` writes.
enum S2pStatus s2p_embedding_sigma(const struct S2pEmbedding *embedding,
                                   double *out,
                                   size_t out_len);

// `(1 - alpha) * l1(mu_a - mu_b) + alpha * l1(sigma_a - sigma_b)`.
// `alpha` is read only in `S2P_ALPHA_MODE_FIXED`. Per-pair mode can give
// negative values.
//
// # Safety
//
// `a` and `b` must be live handles and `out` a valid pointer.
enum S2pStatus s2p_distance(const struct S2pEmbedding *a,
                            const struct S2pEmbedding *b,
                            enum S2pAlphaMode mode,
                            double alpha,
                            double *out);

// KL(p || q) between diagonal Gaussians of dimension `k`.
//
// # Safety
//
// The four arrays must be valid for `k` reads and `out` a valid pointer.
enum S2pStatus s2p_gaussian_kl(const double *mu_p,
                               const double *var_p,
                               const double *mu_q,
                               const double *var_q,
                               size_t k,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEN2PRO_H */
