#ifndef QSEP_H
#define QSEP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Status codes; the nonzero values match the `qsep` executable's exit codes.
 */
typedef enum QsepStatus {
  QSEP_STATUS_OK = 0,
  /*
   Null pointer, bad length, invalid UTF-8 or other caller error.
   */
  QSEP_STATUS_USAGE = 1,
  /*
   File missing, unreadable or malformed.
   */
  QSEP_STATUS_IO = 2,
  /*
   Numeric failure inside the library.
   */
  QSEP_STATUS_NUMERIC = 3,
  QSEP_STATUS_PROVIDER = 4,
  /*
   A Rust panic was caught; the library state is unchanged.
   */
  QSEP_STATUS_PANIC = 5,
} QsepStatus;

/*
 A loaded separator checkpoint.
 */
typedef struct QsepModel QsepModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null after a
 success. Valid until the next qsep call on the same thread.
 */
const char *qsep_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *qsep_version(void);

/*
 Loads a JSON checkpoint. On success `*out` owns a new handle.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum QsepStatus qsep_model_load(const char *path, struct QsepModel **out);

/*
 Releases a handle from [`qsep_model_load`]. Null is ignored.

 # Safety
 `model` must be null or a live handle not freed before.
 */
void qsep_model_free(struct QsepModel *model);

/*
 Sample rate the model expects, or 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
uint32_t qsep_model_sample_rate(const struct QsepModel *model);

/*
 Query embedding dimension of the model, or 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t qsep_model_embed_dim(const struct QsepModel *model);

/*
 Separates the source described by `query` from a mono mixture at the
 model's sample rate. `out` receives `len` samples.

 The text is embedded with the same hashing scheme as the executable;
 pass the same `embed_seed` the model was trained with.

 # Safety
 `samples` and `out` must each point to `len` doubles; `query` must be a
 NUL-terminated string.
 */
enum QsepStatus qsep_separate_text(const struct QsepModel *model,
                                   const double *samples,
                                   size_t len,
                                   const char *query,
                                   uint64_t embed_seed,
                                   double *out);

/*
 Like [`qsep_separate_text`] with an explicit embedding of `dim` values,
 which must equal [`qsep_model_embed_dim`].

 # Safety
 `samples` and `out` must each point to `len` doubles and `embedding` to
 `dim` doubles.
 */
enum QsepStatus qsep_separate_embedding(const struct QsepModel *model,
                                        const double *samples,
                                        size_t len,
                                        const double *embedding,
                                        size_t dim,
                                        double *out);

/*
 Writes the hashed text embedding of `text` into `out[0..dim]`.

 # Safety
 `text` must be a NUL-terminated string and `out` must hold `dim` doubles.
 */
enum QsepStatus qsep_text_embedding(const char *text, uint64_t seed, double *out, size_t dim);

/*
 Scale-invariant SDR in dB, capped at +100 and floored at -100.

 # Safety
 `estimate` and `reference` must point to `len` doubles; `out` must be
 writable.
 */
enum QsepStatus qsep_si_sdr(const double *estimate,
                            const double *reference,
                            size_t len,
                            double *out);

/*
 Plain SDR in dB, capped at +100 and floored at -100.

 # Safety
 Same as [`qsep_si_sdr`].
 */
enum QsepStatus qsep_sdr(const double *estimate, const double *reference, size_t len, double *out);

/*
 Offline query: scene words not mentioned in the region description.
 `*out` receives a string to release with [`qsep_string_free`].

 # Safety
 `scene` and `region` must be NUL-terminated strings; `out` must be
 writable.
 */
enum QsepStatus qsep_fallback_subtract(const char *scene, const char *region, char **out);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must be null or a string from this library not freed before.
 */
void qsep_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QSEP_H */
