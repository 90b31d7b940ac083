/* C interface to the SSMIC learned image codec.
 *
 * Every function returns an ssmic_status. On failure, ssmic_last_error()
 * describes the problem for the calling thread until its next API call.
 * Strings returned through char** are owned by the caller and released with
 * ssmic_free_string. Handles are opaque and released with their _free call.
 */
#ifndef SSMIC_H
#define SSMIC_H

#include <stddef.h>
#include <stdint.h>

#if defined(SSMIC_BUILDING_LIBRARY)
#define SSMIC_API __attribute__((visibility("default")))
#else
#define SSMIC_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ssmic_status {
  SSMIC_OK = 0,
  SSMIC_ERR_INVALID_ARGUMENT = 1,
  SSMIC_ERR_SHAPE = 2,
  SSMIC_ERR_IO = 3,
  SSMIC_ERR_MAGIC = 4,
  SSMIC_ERR_VERSION = 5,
  SSMIC_ERR_DIGEST = 6,
  SSMIC_ERR_TRUNCATED = 7,
  SSMIC_ERR_CORRUPT = 8,
  SSMIC_ERR_PARAMETER_SET = 9,
  SSMIC_ERR_DIVERGENCE = 10,
  SSMIC_ERR_NUMERIC = 11,
  SSMIC_ERR_INTERNAL = 12
} ssmic_status;

typedef enum ssmic_format { SSMIC_FORMAT_CSV = 0, SSMIC_FORMAT_TABLE = 1 } ssmic_format;

typedef struct ssmic_config ssmic_config;
typedef struct ssmic_model ssmic_model;

SSMIC_API const char* ssmic_last_error(void);
SSMIC_API const char* ssmic_status_name(ssmic_status status);
/* Process exit code for a status: 0 ok, 1 usage, 2 data error, 3 internal. */
SSMIC_API int ssmic_exit_code(ssmic_status status);
SSMIC_API void ssmic_free_string(char* s);
/* Caps kernel worker threads; 0 restores the SSMIC_THREADS / hardware default. */
SSMIC_API void ssmic_set_threads(uint32_t n);

/* ---- configuration ---- */
SSMIC_API ssmic_status ssmic_config_default(ssmic_config** out);
SSMIC_API ssmic_status ssmic_config_load(const char* path, ssmic_config** out);
SSMIC_API ssmic_status ssmic_config_from_json(const char* json, ssmic_config** out);
SSMIC_API ssmic_status ssmic_config_to_json(const ssmic_config* cfg, char** out);
SSMIC_API ssmic_status ssmic_config_digest(const ssmic_config* cfg, uint64_t* out);
SSMIC_API void ssmic_config_free(ssmic_config* cfg);

/* ---- models (config + weights) ---- */
SSMIC_API ssmic_status ssmic_model_random(const ssmic_config* cfg, uint64_t seed, double weight_std,
                                          ssmic_model** out);
SSMIC_API ssmic_status ssmic_model_load(const ssmic_config* cfg, const char* weights_path, ssmic_model** out);
SSMIC_API ssmic_status ssmic_model_save(const ssmic_model* model, const char* weights_path);
SSMIC_API ssmic_status ssmic_model_param_count(const ssmic_model* model, uint64_t* out);
SSMIC_API void ssmic_model_free(ssmic_model* model);

/* ---- codec ---- */
typedef struct ssmic_code_info {
  uint32_t height;     /* original extents */
  uint32_t width;
  uint64_t bits;       /* z-stream + y-stream payload bits */
  double bpp;          /* bits / (height * width) */
  double psnr;         /* filled by ssmic_eval_file; +inf when lossless */
} ssmic_code_info;

SSMIC_API ssmic_status ssmic_encode_file(const ssmic_model* model, const char* png_in, const char* container_out,
                                         const char* lambda_tag, ssmic_code_info* info);
SSMIC_API ssmic_status ssmic_decode_file(const ssmic_model* model, const char* container_in, const char* png_out);
/* Encode, decode and measure against the source image. */
SSMIC_API ssmic_status ssmic_eval_file(const ssmic_model* model, const char* png_in, ssmic_code_info* info);

/* ---- evaluation tools ---- */
SSMIC_API ssmic_status ssmic_bd_rate(const double* anchor_bpp, const double* anchor_psnr, size_t anchor_count,
                                     const double* test_bpp, const double* test_psnr, size_t test_count,
                                     double* out_percent);
SSMIC_API ssmic_status ssmic_bd_rate_csv(const char* anchor_csv, const char* test_csv, double* out_percent);
SSMIC_API ssmic_status ssmic_complexity(const ssmic_config* cfg, uint32_t height, uint32_t width,
                                        ssmic_format format, char** report, uint64_t* macs, uint64_t* flops,
                                        uint64_t* params);
/* Encode and decode latency of a seeded random height x width image. */
SSMIC_API ssmic_status ssmic_bench(const ssmic_model* model, uint32_t height, uint32_t width, uint32_t warmup,
                                   uint32_t iterations, uint64_t seed, ssmic_format format, char** report);

/* ---- training ---- */
typedef struct ssmic_train_options {
  double lambda;
  uint32_t steps;
  double learning_rate;
  uint32_t crop;
  uint64_t seed;
  double weight_std;
} ssmic_train_options;

SSMIC_API void ssmic_train_options_default(ssmic_train_options* opts);
/* Trains from random init on the given PNGs; writes weights and optionally
 * the loss trace CSV (trace_csv may be NULL). */
SSMIC_API ssmic_status ssmic_train_toy(const ssmic_config* cfg, const char* const* png_paths, size_t count,
                                       const ssmic_train_options* opts, const char* weights_out,
                                       const char* trace_csv, double* first_loss, double* last_loss);

/* Runs the built-in oracle checks; report holds one line per check. */
SSMIC_API ssmic_status ssmic_selftest(char** report, int* failures);

#ifdef __cplusplus
}
#endif

#endif /* SSMIC_H */
