/* SPDX-License-Identifier: Apache-2.0 */
#ifndef ZSMIL_ZSMIL_H
#define ZSMIL_ZSMIL_H

/*
 * C interface to libzsmil: zero-shot-initialized multiple-instance learning
 * over precomputed patch embeddings.
 *
 * Objects are opaque handles created by *_open / *_load / *_run calls and
 * released with the matching *_free. Every fallible call returns a
 * zsmil_status; on failure zsmil_last_error() describes the problem (the
 * message is per thread and valid until the next failing call on it).
 * Strings returned through char** out-parameters are owned by the caller and
 * released with zsmil_free_string.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(ZSMIL_BUILDING_LIBRARY)
#define ZSMIL_API __attribute__((visibility("default")))
#else
#define ZSMIL_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum zsmil_status {
  ZSMIL_OK = 0,
  ZSMIL_ERR_INVALID_ARGUMENT = 1,
  ZSMIL_ERR_ZERO_NORM = 2,
  ZSMIL_ERR_SHAPE_MISMATCH = 3,
  ZSMIL_ERR_DIM_MISMATCH = 4,
  ZSMIL_ERR_EMPTY_BAG = 5,
  ZSMIL_ERR_BAD_MAGIC = 6,
  ZSMIL_ERR_UNSUPPORTED_VERSION = 7,
  ZSMIL_ERR_TRUNCATED_PAYLOAD = 8,
  ZSMIL_ERR_NON_FINITE_VALUE = 9,
  ZSMIL_ERR_IO = 10,
  ZSMIL_ERR_PARSE = 11,
  ZSMIL_ERR_LABEL_OUT_OF_RANGE = 12,
  ZSMIL_ERR_MISSING_FILE = 13,
  ZSMIL_ERR_INVALID_SPEC = 14,
  ZSMIL_ERR_DUPLICATE_CLASS = 15,
  ZSMIL_ERR_EMPTY_TEMPLATES = 16,
  ZSMIL_ERR_ENSEMBLE_DEGENERATE = 17,
  ZSMIL_ERR_SIDECAR_MISMATCH = 18,
  ZSMIL_ERR_STALE_RECORD = 19,
  ZSMIL_ERR_STALE_CACHE = 20,
  ZSMIL_ERR_INSUFFICIENT_BAGS = 21,
  ZSMIL_ERR_NON_FINITE_LOSS = 22,
  ZSMIL_ERR_EMPTY_CLASS = 23,
  ZSMIL_ERR_EMPTY_LIST = 24,
  ZSMIL_ERR_NOT_FOUND = 25,
  ZSMIL_ERR_INTERNAL = 26
} zsmil_status;

typedef struct zsmil_dataset zsmil_dataset;
typedef struct zsmil_prototypes zsmil_prototypes;
typedef struct zsmil_model zsmil_model;
typedef struct zsmil_report zsmil_report;

ZSMIL_API const char* zsmil_version(void);
/* "Ok", "BadMagic", ... */
ZSMIL_API const char* zsmil_status_name(zsmil_status status);
ZSMIL_API const char* zsmil_last_error(void);
/* Process exit code for a status: 0 ok, 2 usage/config, 3 data, 4 numeric. */
ZSMIL_API int zsmil_status_exit_code(zsmil_status status);
ZSMIL_API void zsmil_free_string(char* s);

/* ---- embedding files ---------------------------------------------------- */

ZSMIL_API zsmil_status zsmil_embeddings_write(const char* path, const float* data, uint64_t rows, uint64_t cols);
/* *data is allocated by the library; release with zsmil_free_floats. */
ZSMIL_API zsmil_status zsmil_embeddings_read(const char* path, float** data, uint64_t* rows, uint64_t* cols);
ZSMIL_API void zsmil_free_floats(float* data);

/* ---- synthetic data ----------------------------------------------------- */

/* spec_json: {"n_classes", "dim", "bags_per_class": {"train_pool","val","test"},
 * "patches_per_bag": [min,max], "evidence_fraction", "class_separation",
 * "noise_sigma", "prototype_noise", "seed"}; omitted keys take defaults except
 * "seed", which is required. Writes manifest.jsonl, bags/, prototypes.{zsml,json}. */
ZSMIL_API zsmil_status zsmil_synth(const char* spec_json, const char* out_dir);

/* ---- prototypes --------------------------------------------------------- */

/* path: "<base>", "<base>.zsml" or "<base>.json". */
ZSMIL_API zsmil_status zsmil_prototypes_load(const char* path, zsmil_prototypes** out);
/* Prompt ensembling over a template file pair written by the feature exporter. */
ZSMIL_API zsmil_status zsmil_prototypes_from_templates(const char* templates_path, double temperature,
                                                       zsmil_prototypes** out);
ZSMIL_API zsmil_status zsmil_prototypes_save(const zsmil_prototypes* protos, const char* base);
ZSMIL_API size_t zsmil_prototypes_num_classes(const zsmil_prototypes* protos);
ZSMIL_API size_t zsmil_prototypes_dim(const zsmil_prototypes* protos);
ZSMIL_API void zsmil_prototypes_free(zsmil_prototypes* protos);

/* ---- datasets ----------------------------------------------------------- */

/* n_classes = 0 skips the label range check. */
ZSMIL_API zsmil_status zsmil_dataset_open(const char* manifest_path, size_t n_classes, zsmil_dataset** out);
ZSMIL_API size_t zsmil_dataset_size(const zsmil_dataset* ds);
ZSMIL_API void zsmil_dataset_free(zsmil_dataset* ds);

/* ---- zero-shot baseline ------------------------------------------------- */

/* split: "train_pool", "val" or "test". *out_json receives
 * {"balanced_accuracy", "per_class_recall", "predictions": [...], ...}. */
ZSMIL_API zsmil_status zsmil_zeroshot(const zsmil_dataset* ds, const zsmil_prototypes* protos, const char* split,
                                      char** out_json);

/* ---- few-shot protocol -------------------------------------------------- */

/* config_json keys: "seed" (required), "preset" ("ablate-init" | "ablate-agg")
 * or "arms": [{"label","aggregator","init"}], "k_values", "repeats",
 * "val_fraction", "jobs", "title", "model_dir", "train": {...},
 * "provenance": {...}. */
ZSMIL_API zsmil_status zsmil_run_protocol(const zsmil_dataset* ds, const zsmil_prototypes* protos,
                                          const char* config_json, zsmil_report** out);
ZSMIL_API zsmil_status zsmil_report_load(const char* path, zsmil_report** out);
/* Concatenates the rows of several reports; the zero-shot row comes from the first. */
ZSMIL_API zsmil_status zsmil_report_merge(const zsmil_report* const* reports, size_t count, zsmil_report** out);
ZSMIL_API zsmil_status zsmil_report_json(const zsmil_report* report, char** out);
ZSMIL_API zsmil_status zsmil_report_text(const zsmil_report* report, char** out);
ZSMIL_API void zsmil_report_free(zsmil_report* report);

/* ---- trained models ----------------------------------------------------- */

ZSMIL_API zsmil_status zsmil_model_load(const char* path, zsmil_model** out);
ZSMIL_API zsmil_status zsmil_model_info(const zsmil_model* model, char** out_json);
/* Writes <out_base>.csv and <out_base>.json for one slide of the dataset. */
ZSMIL_API zsmil_status zsmil_export_attention(const zsmil_model* model, const zsmil_dataset* ds,
                                              const char* slide_id, const char* out_base);
ZSMIL_API void zsmil_model_free(zsmil_model* model);

#ifdef __cplusplus
}
#endif

#endif /* ZSMIL_ZSMIL_H */
