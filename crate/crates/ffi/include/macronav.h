#ifndef MACRONAV_H
#define MACRONAV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Episode outcome codes written by [`mnav_env_step`].
 */
#define MNAV_OUTCOME_RUNNING 0

#define MNAV_OUTCOME_SUCCESS 1

#define MNAV_OUTCOME_TIMEOUT 2

#define MNAV_OUTCOME_STUCK 3

typedef enum MnavStatus {
  MNAV_STATUS_OK = 0,
  MNAV_STATUS_NULL_POINTER = 1,
  MNAV_STATUS_INVALID_ARGUMENT = 2,
  MNAV_STATUS_IO = 3,
  /**
   * Closed handle, no episode yet, or stepping a finished episode.
   */
  MNAV_STATUS_INVALID_STATE = 4,
  MNAV_STATUS_BUFFER_TOO_SMALL = 5,
  MNAV_STATUS_INTERNAL = 6,
} MnavStatus;

typedef enum MnavMaskKind {
  MNAV_MASK_KIND_SPM = 0,
  MNAV_MASK_KIND_FOV = 1,
  MNAV_MASK_KIND_MAE = 2,
} MnavMaskKind;

/**
 * Opaque environment handle.
 */
typedef struct MnavEnv MnavEnv;

/**
 * Environment settings that cross the boundary.
 */
typedef struct MnavEnvConfig {
  uint32_t k_nodes;
  double r_local_m;
  uint32_t knn;
  uint32_t context_size;
  uint32_t patch;
  uint32_t max_steps;
  double success_radius_m;
  double sensor_range_m;
  uint32_t sensor_rays;
  double r_goal;
  double lambda_s;
  double lambda_h;
} MnavEnvConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Native crate version, NUL terminated, static.
 */
const char *mnav_version(void);

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *mnav_last_error(void);

struct MnavEnvConfig mnav_env_config_default(void);

/**
 * Creates a handle. Free it with [`mnav_env_free`].
 *
 * # Safety
 * `cfg` is null (defaults) or points to a valid config; `out` is valid for one write.
 */
enum MnavStatus mnav_env_new(const struct MnavEnvConfig *cfg, struct MnavEnv **out);

/**
 * Starts an episode on the map file `map_path` (PGM plus optional sidecar)
 * between two metric poses.
 *
 * # Safety
 * `h` comes from [`mnav_env_new`]; `map_path` is a NUL-terminated string.
 */
enum MnavStatus mnav_env_reset_map(struct MnavEnv *h,
                                   const char *map_path,
                                   double start_x,
                                   double start_y,
                                   double goal_x,
                                   double goal_y,
                                   uint64_t seed);

/**
 * Starts generated episode `episode` of difficulty `level` (0 easy, 1 medium,
 * 2 hard) from the train (0) or test (1) split, exactly as the native
 * evaluation does for the same `seed`.
 *
 * # Safety
 * `h` comes from [`mnav_env_new`].
 */
enum MnavStatus mnav_env_reset_level(struct MnavEnv *h,
                                     uint32_t level,
                                     uint32_t split,
                                     uint64_t episode,
                                     uint64_t seed);

/**
 * Buffer sizes: the context is `context_h * context_w` floats, node features
 * `k_nodes * node_features` floats and the node mask `k_nodes` ints.
 *
 * # Safety
 * `h` comes from [`mnav_env_new`]; each output pointer is null or writable.
 */
enum MnavStatus mnav_env_shape(struct MnavEnv *h,
                               uint32_t *context_h,
                               uint32_t *context_w,
                               uint32_t *k_nodes,
                               uint32_t *node_features);

/**
 * Copies the current observation. Node rows beyond the node count are zero
 * and masked out.
 *
 * # Safety
 * `h` comes from [`mnav_env_new`]; buffers are valid for their stated lengths.
 */
enum MnavStatus mnav_env_observation(struct MnavEnv *h,
                                     float *context,
                                     size_t context_len,
                                     float *nodes,
                                     size_t nodes_len,
                                     int32_t *node_mask,
                                     size_t node_mask_len,
                                     uint32_t *n_nodes);

/**
 * Moves to candidate node `action`.
 *
 * # Safety
 * `h` comes from [`mnav_env_new`]; output pointers are null or writable.
 */
enum MnavStatus mnav_env_step(struct MnavEnv *h,
                              int32_t action,
                              double *reward,
                              int32_t *done,
                              int32_t *outcome);

/**
 * Agent pose in metres and steps taken so far.
 *
 * # Safety
 * `h` comes from [`mnav_env_new`]; output pointers are null or writable.
 */
enum MnavStatus mnav_env_pose(struct MnavEnv *h, double *x, double *y, uint32_t *steps);

/**
 * Releases the native environment. Later calls on the handle fail with
 * `InvalidState`; the handle itself still needs [`mnav_env_free`].
 *
 * # Safety
 * `h` comes from [`mnav_env_new`].
 */
enum MnavStatus mnav_env_close(struct MnavEnv *h);

/**
 * # Safety
 * `h` is null or comes from [`mnav_env_new`] and is not used afterwards.
 */
void mnav_env_free(struct MnavEnv *h);

/**
 * Draws one mask over a `grid_h x grid_w` patch grid with the native
 * generator seeded by `seed`, writing the sorted masked indices.
 * `p0` / `p1`: SPM rho and smoothness, FOV rho_fov and rho_expand, MAE ratio
 * (p1 unused).
 *
 * # Safety
 * `out` is valid for `out_len` writes; `n_out` is null or writable.
 */
enum MnavStatus mnav_mask(enum MnavMaskKind kind,
                          uint32_t grid_h,
                          uint32_t grid_w,
                          double p0,
                          double p1,
                          uint64_t seed,
                          int32_t *out,
                          size_t out_len,
                          size_t *n_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MACRONAV_H */
