#ifndef FDNA_H
#define FDNA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result codes shared by every function.
typedef enum FdnaStatus {
  FDNA_STATUS_OK = 0,
  FDNA_STATUS_NULL_POINTER = 1,
  FDNA_STATUS_INVALID_ARGUMENT = 2,
  FDNA_STATUS_DATA = 3,
  FDNA_STATUS_NUMERICAL = 4,
  FDNA_STATUS_IO = 5,
  FDNA_STATUS_PANIC = 6,
} FdnaStatus;

// Channel of a loaded model.
typedef enum FdnaChannel {
  FDNA_CHANNEL_ATTRIBUTE = 0,
  FDNA_CHANNEL_PRECOMPUTED = 1,
  FDNA_CHANNEL_COMBINED = 2,
} FdnaChannel;

// Opaque item model of any channel.
typedef struct FdnaModel FdnaModel;

// Opaque embedding store: item ids with one fDNA vector each.
typedef struct FdnaStore FdnaStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next call on the same thread.
const char *fdna_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *fdna_version(void);

// Logistic purchase probability `σ(f·w + b)` over vectors of length `dim`.
//
// # Safety
// `f` and `w` must point to `dim` doubles; `out` to one writable double.
enum FdnaStatus fdna_predict_probability(const double *f,
                                         const double *w,
                                         size_t dim,
                                         double b,
                                         double *out);

// Cosine distance `1 − cos(f, g)` of two vectors of length `dim`.
//
// # Safety
// `f` and `g` must point to `dim` doubles; `out` to one writable double.
enum FdnaStatus fdna_cosine_distance(const double *f, const double *g, size_t dim, double *out);

// Area under the ROC curve of `n` scores against 0/1 labels; ties count one half.
//
// # Safety
// `scores` must point to `n` doubles, `labels` to `n` bytes, `out` to one double.
enum FdnaStatus fdna_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

// Opens an embedding store file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum FdnaStatus fdna_store_open(const char *path, struct FdnaStore **out);

// Releases a store; null is ignored.
//
// # Safety
// `store` must come from [`fdna_store_open`] and not be used afterwards.
void fdna_store_free(struct FdnaStore *store);

// Number of items, or 0 for a null store.
//
// # Safety
// `store` must be null or a live store.
size_t fdna_store_len(const struct FdnaStore *store);

// Vector dimension, or 0 for a null store.
//
// # Safety
// `store` must be null or a live store.
size_t fdna_store_dim(const struct FdnaStore *store);

// Item id at `index`, owned by the store; null when out of range.
//
// # Safety
// `store` must be null or a live store.
const char *fdna_store_id(const struct FdnaStore *store, size_t index);

// Copies the vector of item `id` into `out` (length must equal the dimension).
//
// # Safety
// `store` must be a live store, `id` a NUL-terminated string and `out` point to
// `out_len` writable doubles.
enum FdnaStatus fdna_store_get(const struct FdnaStore *store,
                               const char *id,
                               double *out,
                               size_t out_len);

// The `k` nearest items to `id` by cosine distance. Writes store indices and
// distances, nearest first. Slots left over when fewer than `k` items have a
// nonzero vector get index `SIZE_MAX` and distance NaN.
//
// # Safety
// `store` must be a live store, `id` a NUL-terminated string, and `indices` and
// `distances` must each point to `k` writable elements.
enum FdnaStatus fdna_store_neighbors(const struct FdnaStore *store,
                                     const char *id,
                                     size_t k,
                                     size_t *indices,
                                     double *distances);

// Opens a model artifact written by `fdna train`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum FdnaStatus fdna_model_open(const char *path, struct FdnaModel **out);

// Releases a model; null is ignored.
//
// # Safety
// `model` must come from [`fdna_model_open`] and not be used afterwards.
void fdna_model_free(struct FdnaModel *model);

// Channel of the model.
//
// # Safety
// `model` must be a live model; `out` must be writable.
enum FdnaStatus fdna_model_channel(const struct FdnaModel *model, enum FdnaChannel *out);

// fDNA width, or 0 for a null model.
//
// # Safety
// `model` must be null or a live model.
size_t fdna_model_output_width(const struct FdnaModel *model);

// Width of the first input: the attribute one-hot width, or the feature width
// for a precomputed model. 0 for a null model.
//
// # Safety
// `model` must be null or a live model.
size_t fdna_model_input_width(const struct FdnaModel *model);

// Inference-mode fDNA of one item. `input` is the dense attribute vector
// (attribute and combined models) or the feature vector (precomputed models);
// `features` is read by combined models only and may be null otherwise.
//
// # Safety
// Pointers must reference the stated number of doubles; `out` must hold
// `out_len` writable doubles.
enum FdnaStatus fdna_model_infer(const struct FdnaModel *model,
                                 const double *input,
                                 size_t input_len,
                                 const double *features,
                                 size_t features_len,
                                 double *out,
                                 size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FDNA_H */
