#ifndef WSRAM_H
#define WSRAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values 2–5 coincide with the command-line exit codes.
 */
typedef enum WsramStatus {
  WSRAM_STATUS_OK = 0,
  /**
   * Numerical or internal failure.
   */
  WSRAM_STATUS_FAILURE = 1,
  /**
   * Invalid configuration, dimensions or arguments.
   */
  WSRAM_STATUS_INVALID_ARGUMENT = 2,
  WSRAM_STATUS_INPUT_FORMAT = 3,
  WSRAM_STATUS_VERIFICATION = 4,
  WSRAM_STATUS_DEGENERATE_WEIGHTS = 5,
  WSRAM_STATUS_NULL_POINTER = 6,
  WSRAM_STATUS_IO = 7,
  WSRAM_STATUS_PANIC = 8,
} WsramStatus;

/**
 * A trained attention model.
 */
typedef struct WsramModel WsramModel;

/**
 * A discrete toy world with its exact tabular policy.
 */
typedef struct WsramToyWorld WsramToyWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *wsram_last_error(void);

/**
 * Loads a checkpoint written by `wsram train`.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be valid for a write.
 */
enum WsramStatus wsram_model_load(const char *path, struct WsramModel **out);

/**
 * # Safety
 * `model` must come from [`wsram_model_load`] and not be used afterwards.
 */
void wsram_model_free(struct WsramModel *model);

/**
 * Number of classes the model predicts.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t wsram_model_classes(const struct WsramModel *model);

/**
 * Classifies a row-major `height × width` image (pixels in [0, 1]) by
 * averaging the class distribution over `rollouts` glimpse rollouts.
 *
 * The sensor is described by `scales[n_scales]` (window sides), `retina`,
 * `low_res_side` and `grid` (0 for continuous locations). Writes the
 * predicted class and, if `probs` is non-null, `probs_len` averaged class
 * probabilities (`probs_len` must equal the class count).
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum WsramStatus wsram_model_classify(const struct WsramModel *model,
                                      const double *pixels,
                                      size_t height,
                                      size_t width,
                                      const size_t *scales,
                                      size_t n_scales,
                                      size_t retina,
                                      size_t low_res_side,
                                      size_t grid,
                                      size_t rollouts,
                                      uint64_t seed,
                                      size_t *out_class,
                                      double *probs,
                                      size_t probs_len);

/**
 * A random toy world: every table row is a softmax of `spread`-scaled
 * standard normal logits.
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum WsramStatus wsram_toy_world_random(size_t cells,
                                        size_t scales,
                                        size_t glimpses,
                                        size_t classes,
                                        double spread,
                                        uint64_t seed,
                                        struct WsramToyWorld **out);

/**
 * # Safety
 * `world` must come from [`wsram_toy_world_random`] and not be used
 * afterwards.
 */
void wsram_toy_world_free(struct WsramToyWorld *world);

/**
 * Exact `log p(y)` by enumerating every glimpse sequence.
 *
 * # Safety
 * `world` must be a live handle; `out` valid for a write.
 */
enum WsramStatus wsram_toy_exact_log_marginal(const struct WsramToyWorld *world,
                                              size_t label,
                                              double *out);

/**
 * Exact KL(posterior ‖ proposal) for `label`.
 *
 * # Safety
 * `world` must be a live handle; `out` valid for a write.
 */
enum WsramStatus wsram_toy_exact_kl(const struct WsramToyWorld *world, size_t label, double *out);

/**
 * Self-normalises `n` log importance weights into `normalized[n]` and
 * writes the effective sample size `1/Σŵ²`.
 *
 * # Safety
 * `log_weights` and `normalized` must hold `n` elements; `out_ess` valid
 * for a write.
 */
enum WsramStatus wsram_importance_weights(const double *log_weights,
                                          size_t n,
                                          double *normalized,
                                          double *out_ess);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WSRAM_H */
