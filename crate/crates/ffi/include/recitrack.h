#ifndef RECITRACK_H
#define RECITRACK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum RtStatus {
  RT_STATUS_OK = 0,
  RT_STATUS_NULL_POINTER = 1,
  RT_STATUS_INVALID_ARGUMENT = 2,
  RT_STATUS_INVALID_CONFIG = 3,
  RT_STATUS_INSUFFICIENT_SAMPLES = 4,
  RT_STATUS_NON_FINITE = 5,
  RT_STATUS_IO = 6,
  RT_STATUS_INTERNAL = 7,
  RT_STATUS_PANIC = 8,
} RtStatus;

// Opaque tracker handle.
typedef struct RtTracker RtTracker;

// Axis-aligned box, top-left corner plus size, in pixels.
typedef struct RtBox {
  double x;
  double y;
  double w;
  double h;
} RtBox;

// Per-frame tracking output.
typedef struct RtFrameResult {
  // Reported box, refined when regression applied.
  struct RtBox output;
  // Highest-scoring proposal before regression.
  struct RtBox predicted;
  // Positive-class probability of `predicted`.
  double probability;
  // 1 when a model update ran after this frame.
  int32_t updated;
} RtFrameResult;

// Summary scores of a box sequence.
typedef struct RtMetrics {
  double cle;
  double dp20;
  double auc;
  double os50;
} RtMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call on this thread.
const char *rt_last_error(void);

// Library version as a static NUL-terminated string.
const char *rt_version(void);

// Intersection over union of two boxes; negative when either box is degenerate.
double rt_iou(struct RtBox a, struct RtBox b);

// Creates a tracker on the first frame.
//
// `pixels` holds 8-bit row-major samples with `channels` (1 or 3) values per
// pixel. `config_json` is a tracker configuration in JSON and may be null for
// the defaults. On success `*out` owns a handle to release with
// `rt_tracker_free`.
//
// # Safety
// Pointers must be valid for the sizes given; `config_json` must be
// NUL-terminated when non-null.
enum RtStatus rt_tracker_create(const uint8_t *pixels,
                                size_t width,
                                size_t height,
                                size_t channels,
                                struct RtBox init,
                                const char *config_json,
                                struct RtTracker **out);

// Tracks the target into the next frame.
//
// # Safety
// `tracker` must come from `rt_tracker_create`; `pixels` as for creation.
enum RtStatus rt_tracker_track(struct RtTracker *tracker,
                               const uint8_t *pixels,
                               size_t width,
                               size_t height,
                               size_t channels,
                               struct RtFrameResult *out);

// Number of frames tracked since creation.
//
// # Safety
// `tracker` must come from `rt_tracker_create` or be null.
size_t rt_tracker_frame_count(const struct RtTracker *tracker);

// Releases a tracker. Null is ignored.
//
// # Safety
// `tracker` must come from `rt_tracker_create` and not be used afterwards.
void rt_tracker_free(struct RtTracker *tracker);

// Scores `n` predicted boxes against `n` ground-truth boxes.
//
// # Safety
// `predicted` and `truth` must point to `n` boxes each.
enum RtStatus rt_compute_metrics(const struct RtBox *predicted,
                                 const struct RtBox *truth,
                                 size_t n,
                                 struct RtMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECITRACK_H */
