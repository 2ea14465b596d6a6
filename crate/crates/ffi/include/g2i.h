#ifndef G2I_H
#define G2I_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum G2iStatus {
  G2I_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  G2I_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument was out of range or not valid UTF-8.
   */
  G2I_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A file could not be read or written.
   */
  G2I_STATUS_IO = 3,
  /**
   * Input data was malformed or inconsistent.
   */
  G2I_STATUS_INVALID_DATA = 4,
  /**
   * A pipeline stage failed.
   */
  G2I_STATUS_STAGE_FAILED = 5,
  /**
   * An internal panic was caught.
   */
  G2I_STATUS_PANIC = 6,
} G2iStatus;

/**
 * An attributed graph.
 */
typedef struct G2iGraph G2iGraph;

/**
 * A set of per-node images.
 */
typedef struct G2iImages G2iImages;

/**
 * A trained classifier.
 */
typedef struct G2iModel G2iModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *g2i_version(void);

/**
 * Message for the most recent failure on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *g2i_last_error_message(void);

/**
 * Loads a graph from an edge list, a feature CSV and an optional label CSV
 * (`labels` may be null).
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum G2iStatus g2i_graph_load(const char *edges,
                              const char *features,
                              const char *labels,
                              struct G2iGraph **out);

/**
 * Generates a labelled stochastic block model graph.
 *
 * # Safety
 * `blocks` must point to `n_blocks` readable sizes; `out` must be writable.
 */
enum G2iStatus g2i_graph_synth(const uintptr_t *blocks,
                               uintptr_t n_blocks,
                               double p_in,
                               double p_out,
                               uintptr_t feature_dim,
                               double signal,
                               uint64_t seed,
                               struct G2iGraph **out);

/**
 * Number of nodes, or 0 for a null handle.
 *
 * # Safety
 * `graph` must be null or a live graph handle.
 */
uintptr_t g2i_graph_node_count(const struct G2iGraph *graph);

/**
 * Number of features per node, or 0 for a null handle.
 *
 * # Safety
 * `graph` must be null or a live graph handle.
 */
uintptr_t g2i_graph_feature_count(const struct G2iGraph *graph);

/**
 * # Safety
 * `graph` must be null or a handle not yet freed.
 */
void g2i_graph_free(struct G2iGraph *graph);

/**
 * Clusters, lays out and renders every node with default settings and the
 * given seed. Matches `g2i render` run with the same seed.
 *
 * # Safety
 * `graph` must be a live graph handle; `out` must be writable.
 */
enum G2iStatus g2i_render(const struct G2iGraph *graph, uint64_t seed, struct G2iImages **out);

/**
 * Number of images, or 0 for a null handle.
 *
 * # Safety
 * `images` must be null or a live image-set handle.
 */
uintptr_t g2i_images_count(const struct G2iImages *images);

/**
 * Shape shared by all images: rows, columns and channels.
 *
 * # Safety
 * `images` must be a live handle; the out pointers must be writable.
 */
enum G2iStatus g2i_images_shape(const struct G2iImages *images,
                                uintptr_t *rows,
                                uintptr_t *cols,
                                uintptr_t *channels);

/**
 * Copies image `index` into `buffer` (channel-major, then row, then column).
 * `len` must equal rows * cols * channels. `label` (optional) receives the
 * class index or -1 for an unlabelled node.
 *
 * # Safety
 * `images` must be a live handle; `buffer` must hold `len` floats; `label`
 * must be null or writable.
 */
enum G2iStatus g2i_images_get(const struct G2iImages *images,
                              uintptr_t index,
                              float *buffer,
                              uintptr_t len,
                              int64_t *label);

/**
 * # Safety
 * `images` must be a live handle; `path` NUL-terminated.
 */
enum G2iStatus g2i_images_write(const struct G2iImages *images, const char *path);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` writable.
 */
enum G2iStatus g2i_images_read(const char *path, struct G2iImages **out);

/**
 * # Safety
 * `images` must be null or a handle not yet freed.
 */
void g2i_images_free(struct G2iImages *images);

/**
 * Loads a checkpoint written by `g2i train`.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` writable.
 */
enum G2iStatus g2i_model_load(const char *path, struct G2iModel **out);

/**
 * Predicted class of every image, written to `classes[0..len]`; `len` must
 * equal the number of images.
 *
 * # Safety
 * Handles must be live; `classes` must hold `len` entries.
 */
enum G2iStatus g2i_model_predict(const struct G2iModel *model,
                                 const struct G2iImages *images,
                                 uintptr_t *classes,
                                 uintptr_t len);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void g2i_model_free(struct G2iModel *model);

/**
 * Runs every stage as `g2i run --config <path>` would.
 *
 * # Safety
 * `config_path` must be NUL-terminated.
 */
enum G2iStatus g2i_pipeline_run(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* G2I_H */
