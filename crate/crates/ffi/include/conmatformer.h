#ifndef CONMATFORMER_H
#define CONMATFORMER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Saliency method for `cmf_model_grad_cam`.
typedef enum CmfCamMethod {
  CMF_CAM_METHOD_GRAD_CAM = 0,
  CMF_CAM_METHOD_GRAD_CAM_PLUS_PLUS = 1,
} CmfCamMethod;

// Result code of every call.
typedef enum CmfStatus {
  CMF_STATUS_OK = 0,
  CMF_STATUS_NULL_POINTER = 1,
  CMF_STATUS_INVALID_ARGUMENT = 2,
  CMF_STATUS_CONFIG = 3,
  CMF_STATUS_DATA = 4,
  CMF_STATUS_IO = 5,
  CMF_STATUS_NUMERICAL = 6,
  CMF_STATUS_SHAPE = 7,
  CMF_STATUS_BUFFER_TOO_SMALL = 8,
  CMF_STATUS_PANIC = 9,
} CmfStatus;

// Opaque model handle.
typedef struct CmfModel CmfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cmf_version(void);

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *cmf_last_error(void);

// Builds a freshly initialised model from a named preset
// ("paper", "desk" or "tiny"). `num_classes` of 0 keeps the preset's count.
//
// # Safety
// `preset` must be a NUL-terminated string and `out` a valid pointer.
enum CmfStatus cmf_model_new_preset(const char *preset,
                                    size_t num_classes,
                                    uint64_t seed,
                                    struct CmfModel **out);

// Builds a model from `key = value` configuration text laid over the
// "desk" preset.
//
// # Safety
// `config` must be a NUL-terminated string and `out` a valid pointer.
enum CmfStatus cmf_model_new_config(const char *config, uint64_t seed, struct CmfModel **out);

// Loads a checkpoint written by `cmf_model_save` or the `cmf` tool.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum CmfStatus cmf_model_load(const char *path, struct CmfModel **out);

// # Safety
// `model` must come from this library and `path` be NUL-terminated.
enum CmfStatus cmf_model_save(const struct CmfModel *model, const char *path);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void cmf_model_free(struct CmfModel *model);

// # Safety
// `model` must come from this library; `out` must be valid.
enum CmfStatus cmf_model_param_count(const struct CmfModel *model, size_t *out);

// Input side length and class count of a model.
//
// # Safety
// `model` must come from this library; outputs may be null.
enum CmfStatus cmf_model_dims(const struct CmfModel *model,
                              size_t *input_size,
                              size_t *num_classes);

// Class probabilities for `n` images laid out as `[n, 3, S, S]` in `[0, 1]`.
// Writes `n * num_classes` values to `out`.
//
// # Safety
// `images` must hold `n * 3 * S * S` floats and `out` `out_len` floats.
enum CmfStatus cmf_model_predict_proba(const struct CmfModel *model,
                                       const float *images,
                                       size_t n,
                                       float *out,
                                       size_t out_len);

// Grad-CAM or Grad-CAM++ for one `[3, S, S]` image. Writes the normalised
// `S * S` saliency map to `out` and the explained class to `class_out`.
// A negative `target` explains the predicted class. `tap` names the layer
// ("stem", "stage1".."stage5", "pool"); null means "stage4".
//
// # Safety
// `image` must hold `3 * S * S` floats, `out` `out_len` doubles.
enum CmfStatus cmf_model_grad_cam(const struct CmfModel *model,
                                  const float *image,
                                  int64_t target,
                                  enum CmfCamMethod method,
                                  const char *tap,
                                  double *out,
                                  size_t out_len,
                                  size_t *class_out);

// Paired two-sided t-test over `n` matched scores.
//
// # Safety
// `a` and `b` must hold `n` doubles; outputs may be null.
enum CmfStatus cmf_paired_t_test(const double *a,
                                 const double *b,
                                 size_t n,
                                 double *t_out,
                                 double *p_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONMATFORMER_H */
