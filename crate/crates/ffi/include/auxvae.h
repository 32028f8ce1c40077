#ifndef AUXVAE_H
#define AUXVAE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AuxvaeStatus {
  AUXVAE_STATUS_OK = 0,
  AUXVAE_STATUS_NULL_POINTER = 1,
  AUXVAE_STATUS_INVALID_ARGUMENT = 2,
  AUXVAE_STATUS_IO = 3,
  AUXVAE_STATUS_CHECKPOINT = 4,
  AUXVAE_STATUS_HASH_MISMATCH = 5,
  AUXVAE_STATUS_SHAPE = 6,
  AUXVAE_STATUS_NON_FINITE = 7,
  AUXVAE_STATUS_PANIC = 8,
  AUXVAE_STATUS_INTERNAL = 9,
} AuxvaeStatus;

// Opaque handle to a loaded checkpoint.
typedef struct AuxvaeModel AuxvaeModel;

typedef struct AuxvaeModelInfo {
  size_t num_channels;
  size_t window_len;
  size_t baseline_len;
  size_t num_styles;
  // Nonzero when the model predicts carrying style.
  uint8_t has_style_head;
} AuxvaeModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *auxvae_version(void);

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on this thread.
const char *auxvae_last_error_message(void);

// Loads the checkpoint directory at `path` into `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum AuxvaeStatus auxvae_model_load(const char *path, struct AuxvaeModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from [`auxvae_model_load`] and not be used afterwards.
void auxvae_model_free(struct AuxvaeModel *model);

// # Safety
// `model` and `out` must be valid pointers.
enum AuxvaeStatus auxvae_model_info(const struct AuxvaeModel *model, struct AuxvaeModelInfo *out);

// Predicts the hand load of one raw window.
//
// `x` holds `x_steps` rows and `x_aux` holds `aux_steps` rows, each row being
// `num_channels` values (row-major, unnormalized). Both are resampled and
// normalized as during training. `num_samples` latent draws are averaged;
// zero uses the posterior mean. When `style_probs` is not null and the model
// has a style head, it receives `num_styles` averaged probabilities.
//
// # Safety
// All pointers must be valid for the stated lengths.
enum AuxvaeStatus auxvae_predict(const struct AuxvaeModel *model,
                                 const double *x,
                                 size_t x_steps,
                                 const double *x_aux,
                                 size_t aux_steps,
                                 size_t num_samples,
                                 uint64_t seed,
                                 double *load_lbs,
                                 double *style_probs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUXVAE_H */
