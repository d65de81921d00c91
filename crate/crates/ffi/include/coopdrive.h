#ifndef COOPDRIVE_H
#define COOPDRIVE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum {
  CD_STATUS_OK = 0,
  CD_STATUS_NULL_POINTER = 1,
  CD_STATUS_INVALID_ARGUMENT = 2,
  CD_STATUS_ENCODE_ERROR = 3,
  CD_STATUS_DECODE_ERROR = 4,
  CD_STATUS_UNSUPPORTED_VERSION = 5,
  CD_STATUS_BUFFER_TOO_SMALL = 6,
  CD_STATUS_CHECKPOINT_ERROR = 7,
  CD_STATUS_IO_ERROR = 8,
  CD_STATUS_INTERNAL = 9,
} CdStatus;

/**
 * A merged graph under construction, in the ego frame.
 */
typedef struct CdGraph CdGraph;

/**
 * Network parameters.
 */
typedef struct CdModel CdModel;

/**
 * A decoded window.
 */
typedef struct CdWindow CdWindow;

/**
 * One tracked detection in the sender's sensor frame, metres.
 */
typedef struct {
  uint32_t track_id;
  double x;
  double y;
  double z;
} CdDetection;

typedef struct {
  double x;
  double y;
  double z;
  double yaw;
} CdPose;

typedef struct {
  double p_brake;
  double p_go;
  double beta_spatial;
  double beta_temporal;
  /**
   * 1 to brake, 0 to go.
   */
  bool brake;
} CdPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call on the same thread.
 */
const char *cd_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cd_version(void);

/**
 * Encodes a window of `frame_count` frames. Frame `i` has timestamp
 * `ticks[i]` (tenths of a second) and the next `counts[i]` entries of
 * `detections`. Writes the packet to `out` and its size to `out_len`;
 * if `capacity` is too small, only `out_len` is set and
 * [`CdStatus::BufferTooSmall`] is returned.
 */
CdStatus cd_encode(uint16_t vehicle_id,
                   const uint32_t *ticks,
                   const uint32_t *counts,
                   size_t frame_count,
                   const CdDetection *detections,
                   size_t detection_count,
                   const CdPose *pose,
                   uint8_t *out,
                   size_t capacity,
                   size_t *out_len);

CdStatus cd_decode(const uint8_t *bytes, size_t len, CdWindow **out);

void cd_window_free(CdWindow *w);

/**
 * Sender id, pose and frame count of a decoded window.
 */
CdStatus cd_window_info(const CdWindow *w, uint32_t *vehicle_id, CdPose *pose, size_t *frame_count);

/**
 * Timestamp and detection count of frame `index`.
 */
CdStatus cd_window_frame(const CdWindow *w, size_t index, uint32_t *tick, size_t *detection_count);

CdStatus cd_window_detection(const CdWindow *w, size_t frame, size_t index, CdDetection *out);

CdStatus cd_model_load(const char *path, CdModel **out);

/**
 * Freshly initialised parameters, mainly for testing.
 */
CdStatus cd_model_init(uint64_t seed, CdModel **out);

void cd_model_free(CdModel *m);

CdStatus cd_graph_new(CdGraph **out);

void cd_graph_free(CdGraph *g);

/**
 * Adds a node at (x, y, z) metres and writes its index. Exactly one node
 * must be the ego.
 */
CdStatus cd_graph_add_node(CdGraph *g, double x, double y, double z, bool is_ego, uint32_t *index);

/**
 * Adds an edge. `kind` is 0 for spatial (attr = distance in metres) and 1
 * for temporal (attr = time gap in seconds, `a` the earlier node and `b`
 * the later one).
 */
CdStatus cd_graph_add_edge(CdGraph *g, uint32_t a, uint32_t b, uint32_t kind, double attr);

/**
 * Sets the navigation command by index: lane follow, turn right, turn
 * left, go straight, change left, change right.
 */
CdStatus cd_graph_set_command(CdGraph *g, uint32_t command);

CdStatus cd_predict(const CdModel *m, const CdGraph *g, CdPrediction *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COOPDRIVE_H */
