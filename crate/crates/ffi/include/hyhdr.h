#ifndef HYHDR_H
#define HYHDR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HyhdrStatus {
  HYHDR_STATUS_OK = 0,
  HYHDR_STATUS_NULL_POINTER = 1,
  HYHDR_STATUS_INVALID_ARGUMENT = 2,
  HYHDR_STATUS_SHAPE = 3,
  HYHDR_STATUS_NUMERIC = 4,
  HYHDR_STATUS_CONFIG = 5,
  HYHDR_STATUS_DOMAIN = 6,
  HYHDR_STATUS_FORMAT = 7,
  HYHDR_STATUS_UNSUPPORTED_VERSION = 8,
  HYHDR_STATUS_IO = 9,
  HYHDR_STATUS_INTERNAL = 10,
} HyhdrStatus;

typedef enum HyhdrDomain {
  HYHDR_DOMAIN_LINEAR = 0,
  HYHDR_DOMAIN_MU = 1,
} HyhdrDomain;

// A network with its parameters. Create with `hyhdr_model_load` or
// `hyhdr_model_new`, release with `hyhdr_model_free`.
typedef struct HyhdrModel HyhdrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after success.
// The pointer stays valid until the next call on this thread.
const char *hyhdr_last_error(void);

// Library version as a static NUL-terminated string.
const char *hyhdr_version(void);

// Loads a checkpoint written by `hyhdr train`.
enum HyhdrStatus hyhdr_model_load(const char *path, struct HyhdrModel **out);

// Freshly initialized model. `config_json` holds model options (null for
// defaults).
enum HyhdrStatus hyhdr_model_new(const char *config_json, uint64_t seed, struct HyhdrModel **out);

// Releases a model. Null is ignored.
void hyhdr_model_free(struct HyhdrModel *model);

enum HyhdrStatus hyhdr_model_param_count(const struct HyhdrModel *model, uintptr_t *out);

// Fuses three LDR frames (`frames`: 3 consecutive `H x W x 3` images in
// `[0, 1]`, ascending `evs`) into `out` (`H x W x 3` radiance).
enum HyhdrStatus hyhdr_infer(const struct HyhdrModel *model,
                             const float *frames,
                             const float *evs,
                             uintptr_t height,
                             uintptr_t width,
                             float *out);

// Elementwise μ-law tonemap of `n` values (clamped to `[0, 1]` first).
enum HyhdrStatus hyhdr_mu_law(const float *x, uintptr_t n, double mu, float *out);

// PSNR in dB. For identical images `*identical` is set to true and
// `*out_db` to infinity.
enum HyhdrStatus hyhdr_psnr(const float *a,
                            const float *b,
                            uintptr_t height,
                            uintptr_t width,
                            enum HyhdrDomain dom,
                            double *out_db,
                            bool *identical);

enum HyhdrStatus hyhdr_ssim(const float *a,
                            const float *b,
                            uintptr_t height,
                            uintptr_t width,
                            enum HyhdrDomain dom,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYHDR_H */
