#ifndef ACTIVE_OBJMAP_H
#define ACTIVE_OBJMAP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum AomStatus {
  AomStatusOk = 0,
  AomStatusNullPointer = 1,
  AomStatusInvalidArgument = 2,
  AomStatusSceneError = 3,
  AomStatusIoError = 4,
  AomStatusOutOfRange = 5,
} AomStatus;

/**
 * Exploration strategies, mirroring the CLI names.
 */
typedef enum AomStrategy {
  AomStrategyObjectDriven = 0,
  AomStrategyRandomized = 1,
  AomStrategyCoverage = 2,
  AomStrategyInitOnly = 3,
} AomStrategy;

/**
 * Sensor noise presets.
 */
typedef enum AomNoise {
  AomNoiseOff = 0,
  AomNoiseLow = 1,
  AomNoiseMedium = 2,
} AomNoise;

/**
 * Why a run stopped.
 */
typedef enum AomStopReason {
  AomStopAllExplored = 0,
  AomStopBudgetExhausted = 1,
  AomStopPathExhausted = 2,
} AomStopReason;

/**
 * Opaque handle for one finished exploration run.
 */
typedef struct AomRun AomRun;

/**
 * Opaque ground-truth scene handle.
 */
typedef struct AomScene AomScene;

/**
 * One 9-DoF pose: translation, roll/pitch/yaw, half extents (meters).
 */
typedef struct AomPose {
  double t[3];
  double theta[3];
  double s[3];
} AomPose;

/**
 * Map accuracy against ground truth. `yae_deg` is negative when no matched
 * object has an observable yaw.
 */
typedef struct AomMetrics {
  double cde_cm;
  double yae_deg;
  double iou_2d;
  double iou_3d;
  uint32_t matched;
  uint32_t total;
} AomMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last error on this thread, or null if none occurred.
 * The pointer is invalidated by the next failing call on the same thread.
 */
const char *aom_last_error_message(void);

/**
 * Generate a deterministic tabletop scene.
 *
 * `spacing`: 0 sparse, 1 clustered, 2 uneven.
 */
enum AomStatus aom_scene_generate(uint64_t seed,
                                  uint32_t min_objects,
                                  uint32_t max_objects,
                                  uint32_t spacing,
                                  struct AomScene **out_scene);

/**
 * Load a scene from a JSON file.
 */
enum AomStatus aom_scene_load(const char *path, struct AomScene **out_scene);

/**
 * Number of ground-truth objects in the scene.
 */
enum AomStatus aom_scene_object_count(const struct AomScene *scene, uint32_t *out_count);

void aom_scene_free(struct AomScene *scene);

/**
 * Run one exploration over a scene and return the resulting object map.
 *
 * `budget` is the number of views after the four-corner initialization;
 * pass 0 for the default. `oracle_association` short-circuits data
 * association with ground-truth identities.
 */
enum AomStatus aom_run_exploration(const struct AomScene *scene,
                                   enum AomStrategy strategy,
                                   enum AomNoise noise,
                                   uint64_t seed,
                                   uint32_t budget,
                                   bool oracle_association,
                                   struct AomRun **out_run);

/**
 * Number of objects in the run's final map.
 */
enum AomStatus aom_run_object_count(const struct AomRun *run, uint32_t *out_count);

/**
 * Estimated pose of the map object at `index` (0-based).
 */
enum AomStatus aom_run_object_pose(const struct AomRun *run,
                                   uint32_t index,
                                   struct AomPose *out_pose);

/**
 * Score the run's final map against the scene's ground truth.
 */
enum AomStatus aom_run_evaluate(const struct AomRun *run,
                                const struct AomScene *scene,
                                bool oracle_association,
                                struct AomMetrics *out_metrics);

/**
 * Why the run stopped.
 */
enum AomStatus aom_run_stop_reason(const struct AomRun *run, enum AomStopReason *out_reason);

/**
 * Total number of views the run executed, initialization included.
 */
enum AomStatus aom_run_view_count(const struct AomRun *run, uint32_t *out_count);

void aom_run_free(struct AomRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACTIVE_OBJMAP_H */
