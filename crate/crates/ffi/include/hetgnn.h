#ifndef HETGNN_H
#define HETGNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HgMetric {
  HG_METRIC_PRECISION = 0,
  HG_METRIC_RECALL = 1,
  HG_METRIC_F1 = 2,
  HG_METRIC_PR_AUC = 3,
} HgMetric;

typedef enum HgStatus {
  HG_STATUS_OK = 0,
  /**
   * Null pointer, invalid UTF-8 or an unknown name.
   */
  HG_STATUS_INVALID_ARGUMENT = 1,
  HG_STATUS_CONFIG = 2,
  HG_STATUS_DATA = 3,
  HG_STATUS_NUMERIC = 4,
  /**
   * A panic was caught at the boundary.
   */
  HG_STATUS_INTERNAL = 5,
} HgStatus;

/**
 * Opaque transaction graph.
 */
typedef struct HgGraph HgGraph;

/**
 * Opaque evaluation report of one training run.
 */
typedef struct HgReport HgReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *hg_last_error(void);

/**
 * Generates a synthetic graph. `nodes == 0` keeps the default size.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum HgStatus hg_graph_synth(uintptr_t nodes, uint64_t seed, bool hard, struct HgGraph **out);

/**
 * Loads a bundle directory written by `hetgnn ingest`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HgStatus hg_graph_load(const char *dir, struct HgGraph **out);

/**
 * Balanced labelled subgraph around the graph's fraud accounts.
 *
 * # Safety
 * `g` must be a live graph handle and `out` a valid pointer.
 */
enum HgStatus hg_graph_balanced_subgraph(const struct HgGraph *g,
                                         uint64_t seed,
                                         struct HgGraph **out);

/**
 * Node count, or 0 for a null handle.
 *
 * # Safety
 * `g` must be null or a live graph handle.
 */
uintptr_t hg_graph_node_count(const struct HgGraph *g);

/**
 * Distinct directed edge count, or 0 for a null handle.
 *
 * # Safety
 * `g` must be null or a live graph handle.
 */
uintptr_t hg_graph_edge_count(const struct HgGraph *g);

/**
 * Number of nodes labelled fraudulent, or 0 for a null handle.
 *
 * # Safety
 * `g` must be null or a live graph handle.
 */
uintptr_t hg_graph_fraud_count(const struct HgGraph *g);

/**
 * # Safety
 * `g` must be null or a handle not yet freed.
 */
void hg_graph_free(struct HgGraph *g);

/**
 * Trains `model` (gcn, gat, sage, rgcn, han, hgt) on a labelled graph with a
 * temporal split and evaluates it on the held-out accounts.
 * `config_json` is a training configuration object or null for defaults.
 *
 * # Safety
 * `g` must be a live graph handle, `model` a NUL-terminated string,
 * `config_json` null or NUL-terminated, and `out` a valid pointer.
 */
enum HgStatus hg_train(const struct HgGraph *g,
                       const char *model,
                       const char *config_json,
                       struct HgReport **out);

/**
 * Reads one metric. Returns NaN for a null handle.
 *
 * # Safety
 * `r` must be null or a live report handle.
 */
double hg_report_metric(const struct HgReport *r, enum HgMetric metric);

/**
 * Full report as JSON, owned by the handle. Null for a null handle.
 *
 * # Safety
 * `r` must be null or a live report handle.
 */
const char *hg_report_json(const struct HgReport *r);

/**
 * # Safety
 * `r` must be null or a handle not yet freed.
 */
void hg_report_free(struct HgReport *r);

/**
 * Area under the precision-recall curve of `len` scores against 0/1 labels.
 *
 * # Safety
 * `scores` and `labels` must point to `len` readable elements, `out` to a
 * writable double.
 */
enum HgStatus hg_average_precision(const double *scores,
                                   const uint8_t *labels,
                                   uintptr_t len,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HETGNN_H */
