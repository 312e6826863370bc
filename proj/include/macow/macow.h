#ifndef MACOW_H
#define MACOW_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(MACOW_BUILDING_LIBRARY)
#define MACOW_API __attribute__((visibility("default")))
#else
#define MACOW_API
#endif

/* Every fallible call returns a status; details via macow_last_error(). */
typedef enum macow_status {
  MACOW_OK = 0,
  MACOW_ERR_DIMENSION = 1,
  MACOW_ERR_VALIDATION = 2,
  MACOW_ERR_INVERTIBILITY = 3,
  MACOW_ERR_NUMERIC = 4,
  MACOW_ERR_IO = 5,
  MACOW_ERR_CHECKSUM = 6,
  MACOW_ERR_VERSION = 7,
  MACOW_ERR_CONFIG = 8,
  MACOW_ERR_USAGE = 9,
  MACOW_ERR_STATE = 10,
  MACOW_ERR_INTERNAL = 99
} macow_status;

typedef enum macow_precision { MACOW_F32 = 0, MACOW_F64 = 1 } macow_precision;

typedef enum macow_toy_pattern { MACOW_TOY_RAMPS = 0, MACOW_TOY_CHECKERBOARD = 1 } macow_toy_pattern;

typedef struct macow_config macow_config;
typedef struct macow_dataset macow_dataset;
typedef struct macow_run macow_run;
typedef struct macow_report macow_report;

typedef struct macow_run_info {
  uint64_t step;
  uint64_t skipped_steps;
  uint64_t total_steps;
  macow_precision precision;
  size_t height;
  size_t width;
  size_t channels;
  unsigned n_bits;
  size_t parameter_count;
  int variational; /* 1: variational dequantization, 0: uniform */
  double temperature;
  size_t eval_samples;
} macow_run_info;

typedef struct macow_bench_options {
  const size_t* sizes; /* image side lengths */
  size_t n_sizes;
  size_t batch;
  size_t repeats;
  uint64_t seed;
  macow_precision precision;
} macow_bench_options;

MACOW_API const char* macow_status_string(macow_status status);
/* Message of the last failure on this thread; empty after a success. */
MACOW_API const char* macow_last_error(void);

/* Run configuration. */
MACOW_API macow_status macow_config_default(macow_config** out);
MACOW_API macow_status macow_config_load(const char* path, macow_config** out);
MACOW_API macow_status macow_config_parse(const char* text, macow_config** out);
MACOW_API macow_status macow_config_set(macow_config* cfg, const char* key, const char* value);
/* Copies the canonical text of one key's value into buf (NUL-terminated,
   truncated to cap). */
MACOW_API macow_status macow_config_get(const macow_config* cfg, const char* key, char* buf, size_t cap);
MACOW_API void macow_config_free(macow_config* cfg);

/* Images quantized to n_bits; an MCWT u8 file or a PGM/PPM directory. */
MACOW_API macow_status macow_dataset_open(const char* path, unsigned n_bits, macow_dataset** out);
/* {count, height, width, channels} */
MACOW_API macow_status macow_dataset_shape(const macow_dataset* data, size_t shape[4]);
MACOW_API void macow_dataset_free(macow_dataset* data);
MACOW_API macow_status macow_write_toy_dataset(const char* path, macow_toy_pattern pattern, size_t count,
                                               size_t height, size_t width, uint64_t seed);

/* Model, dequantizer and optimizer state. */
MACOW_API macow_status macow_run_create(const macow_config* cfg, macow_run** out);
MACOW_API macow_status macow_run_load(const char* checkpoint_path, macow_run** out);
MACOW_API void macow_run_free(macow_run* run);
MACOW_API macow_status macow_run_info_get(macow_run* run, macow_run_info* out);
/* Trains up to `until` steps (0: the configured count). log_path "-" is
   stdout; log_path and checkpoint_path may be NULL. */
MACOW_API macow_status macow_run_train(macow_run* run, const macow_dataset* data, const char* log_path,
                                       const char* checkpoint_path, uint64_t until);
MACOW_API macow_status macow_run_save(macow_run* run, const char* checkpoint_path);
/* K-sample bound in bits/dim, averaged over the dataset. */
MACOW_API macow_status macow_run_eval(macow_run* run, const macow_dataset* data, size_t k, uint64_t seed,
                                      double* bpd);
/* Writes n samples as one PGM/PPM grid. */
MACOW_API macow_status macow_run_sample(macow_run* run, size_t n, double temperature, uint64_t seed,
                                        const char* out_path);

/* Oracle suite; MACOW_OK even when checks fail, inspect the report. */
MACOW_API macow_status macow_verify(macow_precision precision, uint64_t seed, macow_report** out);
MACOW_API size_t macow_report_size(const macow_report* report);
MACOW_API int macow_report_passed(const macow_report* report, size_t index);
MACOW_API const char* macow_report_name(const macow_report* report, size_t index);
MACOW_API const char* macow_report_detail(const macow_report* report, size_t index);
MACOW_API void macow_report_free(macow_report* report);

/* Sampling speed. `sizes` of the defaults points to static storage. */
MACOW_API void macow_bench_defaults(macow_bench_options* out);
/* CSV text; release with macow_string_free. */
MACOW_API macow_status macow_bench_csv(const macow_bench_options* options, char** csv);
MACOW_API void macow_string_free(char* text);

#ifdef __cplusplus
}
#endif

#endif
