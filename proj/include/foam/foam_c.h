/* C API for the FOAM library: opaque handles, status codes, JSON summaries.
 *
 * Every function returns FOAM_OK on success; on failure foam_last_error()
 * describes the problem (thread-local). Strings returned through char**
 * parameters are heap-allocated; release them with foam_string_free().
 */
#ifndef FOAM_C_H
#define FOAM_C_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum foam_status {
  FOAM_OK = 0,
  FOAM_ERR_USAGE = 1,    /* invalid arguments, shapes, or configuration */
  FOAM_ERR_NUMERIC = 2,  /* NaN/Inf surfaced, or a gradient check failed */
  FOAM_ERR_IO = 3,       /* filesystem or serialization failure */
  FOAM_ERR_INTERNAL = 4
} foam_status;

/* Dense row-major f32 tensor. */
typedef struct foam_tensor foam_tensor;

const char* foam_version(void);
const char* foam_last_error(void);
void foam_string_free(char* s);

/* ---- tensors (binary format: "FOAMTNSR", u32 rank, u32 extents, f32 LE) -- */

/* data may be NULL for a zero-filled tensor. */
foam_status foam_tensor_create(const uint32_t* extents, uint32_t rank, const float* data,
                               foam_tensor** out);
foam_status foam_tensor_load(const char* path, foam_tensor** out);
foam_status foam_tensor_save(const foam_tensor* t, const char* path);
uint32_t foam_tensor_rank(const foam_tensor* t);
foam_status foam_tensor_extents(const foam_tensor* t, uint32_t* extents_out, uint32_t capacity);
const float* foam_tensor_data(const foam_tensor* t);
uint64_t foam_tensor_numel(const foam_tensor* t);
void foam_tensor_free(foam_tensor* t);

/* ---- analysis ----------------------------------------------------------- */

/* Radial band-energy fractions of the image's spectrum. edges must be
 * strictly increasing in (0, sqrt(2)/2]; fractions_out receives
 * n_edges + 1 values summing to 1. */
foam_status foam_band_energy(const foam_tensor* image, const double* edges, uint32_t n_edges,
                             double* fractions_out);

/* kind: "gb" (parameter = sigma, 3x3 kernel), "du" (parameter = factor),
 * "gn" (parameter = sigma). Image values must lie in [0,1]. */
foam_status foam_corrupt(const foam_tensor* image, const char* kind, double parameter,
                         uint64_t seed, foam_tensor** out);

/* ---- workflows (mirror the CLI subcommands) ----------------------------- */

/* input_path NULL renders the built-in demo scene. corrupt_kind NULL or ""
 * skips the corrupted set. */
foam_status foam_spectrum_run(const char* input_path, const char* corrupt_kind,
                              const char* out_dir, uint64_t seed, char** summary_json);

/* component: conv|ddconv|sigma|sdca|fdba|fsfn|fstb|loss1|loss2|all.
 * Returns FOAM_ERR_NUMERIC (with the report still filled in) when a check
 * exceeds the tolerance. */
foam_status foam_gradcheck_run(const char* component, double tol, char** report_json);

/* config_path NULL uses built-in defaults; seed_override < 0 keeps the
 * configured seed. */
foam_status foam_gen_data(const char* config_path, uint32_t count, const char* out_dir,
                          int64_t seed_override, char** summary_json);
foam_status foam_train_run(const char* config_path, const char* data_dir, const char* out_dir,
                           int64_t seed_override, char** summary_json);
foam_status foam_eval_run(const char* ckpt_dir, const char* data_dir, char** report_json);
foam_status foam_ablate_run(const char* config_path, uint32_t seeds, const char* out_dir,
                            int layer_grid, char** report_json);
foam_status foam_dump_features_run(const char* ckpt_dir, const char* input_path, uint32_t stage,
                                   uint32_t level, const char* corrupt_kind, const char* out_dir,
                                   char** summary_json);

#ifdef __cplusplus
}
#endif

#endif /* FOAM_C_H */
