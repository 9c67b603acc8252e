#ifndef GKAE_COVERT_H
#define GKAE_COVERT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>
#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum GkcStatus {
  GKC_STATUS_OK = 0,
  GKC_STATUS_NULL_POINTER = 1,
  GKC_STATUS_INVALID_ARGUMENT = 2,
  GKC_STATUS_IO = 3,
  GKC_STATUS_NUMERIC = 4,
  GKC_STATUS_BUFFER_TOO_SMALL = 5,
  GKC_STATUS_PANIC = 6,
} GkcStatus;

/*
 Trained model handle.
 */
typedef struct GkcModel GkcModel;

/*
 Simulated trajectory handle.
 */
typedef struct GkcTrajectory GkcTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Length in bytes of the last error message, excluding the terminator.
 */
uintptr_t gkc_last_error_length(void);

/*
 Copies the last error message, NUL-terminated, into `buf`.

 # Safety
 `buf` must be valid for `len` bytes.
 */
enum GkcStatus gkc_last_error_message(char *buf, uintptr_t len);

/*
 Library version as a static NUL-terminated string.
 */
const char *gkc_version(void);

/*
 Simulates one trajectory. `config_json` holds swarm settings (null or
 `"{}"` for the defaults).

 # Safety
 `config_json` must be null or NUL-terminated; `out` must be valid.
 */
enum GkcStatus gkc_simulate(const char *config_json, struct GkcTrajectory **out);

/*
 # Safety
 `traj` must be null or a live handle.
 */
uintptr_t gkc_trajectory_num_frames(const struct GkcTrajectory *traj);

/*
 # Safety
 `traj` must be null or a live handle.
 */
uintptr_t gkc_trajectory_num_uavs(const struct GkcTrajectory *traj);

/*
 Copies the positions of `frame` (`3 * L` values) into `out`.

 # Safety
 `traj` must be a live handle and `out` valid for `len` values.
 */
enum GkcStatus gkc_trajectory_positions(const struct GkcTrajectory *traj,
                                        uintptr_t frame,
                                        double *out,
                                        uintptr_t len);

/*
 # Safety
 `traj` must be null or a handle not yet freed.
 */
void gkc_trajectory_free(struct GkcTrajectory *traj);

/*
 Loads a JSON checkpoint.

 # Safety
 `path` must be NUL-terminated; `out` must be valid.
 */
enum GkcStatus gkc_model_load(const char *path, struct GkcModel **out);

/*
 # Safety
 `model` must be null or a live handle.
 */
uintptr_t gkc_model_num_uavs(const struct GkcModel *model);

/*
 # Safety
 `model` must be null or a live handle.
 */
uintptr_t gkc_model_num_params(const struct GkcModel *model);

/*
 Predicts `horizon` steps from one frame of `num_uavs` positions (m).
 Writes `horizon * num_uavs * 3` values to `out`, step-major.

 # Safety
 `model` must be live, `positions` valid for `3 num_uavs` values and `out`
 for `out_len` values.
 */
enum GkcStatus gkc_model_rollout(const struct GkcModel *model,
                                 const double *positions,
                                 uintptr_t num_uavs,
                                 uintptr_t horizon,
                                 double *out,
                                 uintptr_t out_len);

/*
 # Safety
 `model` must be null or a handle not yet freed.
 */
void gkc_model_free(struct GkcModel *model);

/*
 Covert power bound of `num_nodes` ground nodes (z = 0) for one frame of
 `num_uavs` UAVs, starting from the given nominal powers.

 # Safety
 `uavs` and `nodes` must hold `3 num_uavs` and `3 num_nodes` values;
 `nominal` and `out` must hold `num_nodes` values.
 */
enum GkcStatus gkc_transmit_power_bound(const double *uavs,
                                        uintptr_t num_uavs,
                                        const double *nodes,
                                        uintptr_t num_nodes,
                                        const double *nominal,
                                        double p_det,
                                        double eta,
                                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GKAE_COVERT_H */
