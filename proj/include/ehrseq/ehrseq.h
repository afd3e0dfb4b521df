/* C interface to the ehrseq pipeline. All strings are UTF-8 and NUL
 * terminated; returned strings stay valid until the next call on the same
 * thread (error text) or for the life of the library (option tables). */
#ifndef EHRSEQ_H
#define EHRSEQ_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(EHRSEQ_BUILDING)
#define EHRSEQ_API __declspec(dllexport)
#else
#define EHRSEQ_API __declspec(dllimport)
#endif
#else
#define EHRSEQ_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ehrseq_status {
  EHRSEQ_OK = 0,
  EHRSEQ_USAGE = 2,    /* bad option, missing argument, invalid configuration */
  EHRSEQ_DATA = 3,     /* unreadable or inconsistent input */
  EHRSEQ_NUMERIC = 4,  /* non-finite values or solver failure */
  EHRSEQ_INTERNAL = 5
} ehrseq_status;

typedef struct ehrseq_config ehrseq_config;
typedef struct ehrseq_model ehrseq_model;

typedef void (*ehrseq_text_fn)(const char* text, void* user);

EHRSEQ_API const char* ehrseq_version(void);
/* Message of the last failed call on this thread ("" if none). */
EHRSEQ_API const char* ehrseq_last_error(void);

/* Option and subcommand tables. */
EHRSEQ_API size_t ehrseq_option_count(void);
EHRSEQ_API const char* ehrseq_option_name(size_t i);
EHRSEQ_API const char* ehrseq_option_help(size_t i);
/* Space separated subcommands that read option i. */
EHRSEQ_API const char* ehrseq_option_commands(size_t i);
EHRSEQ_API size_t ehrseq_subcommand_count(void);
EHRSEQ_API const char* ehrseq_subcommand_name(size_t i);
EHRSEQ_API const char* ehrseq_subcommand_help(size_t i);

/* Configuration with default values. */
EHRSEQ_API ehrseq_config* ehrseq_config_new(void);
EHRSEQ_API void ehrseq_config_free(ehrseq_config* config);
EHRSEQ_API ehrseq_status ehrseq_config_set(ehrseq_config* config, const char* key, const char* value);
/* Copies the current value of `key` into buf (truncated, always terminated);
 * returns the full length through `needed` when non-null. */
EHRSEQ_API ehrseq_status ehrseq_config_get(const ehrseq_config* config, const char* key, char* buf, size_t size,
                                           size_t* needed);
/* Applies a "key = value" file. */
EHRSEQ_API ehrseq_status ehrseq_config_load(ehrseq_config* config, const char* path);
/* Number of violated constraints; ehrseq_config_error() describes each as "field: message". */
EHRSEQ_API size_t ehrseq_config_validate(ehrseq_config* config);
EHRSEQ_API const char* ehrseq_config_error(const ehrseq_config* config, size_t i);

/* Runs a subcommand. `output` receives standard-output text and `progress`
 * one progress line per call; either may be null. */
EHRSEQ_API ehrseq_status ehrseq_run(const char* subcommand, const ehrseq_config* config, ehrseq_text_fn output,
                                    ehrseq_text_fn progress, void* user);

/* Trained model access. */
EHRSEQ_API ehrseq_status ehrseq_model_load(const char* checkpoint, ehrseq_model** out);
EHRSEQ_API void ehrseq_model_free(ehrseq_model* model);
EHRSEQ_API size_t ehrseq_model_vocab_size(const ehrseq_model* model);
EHRSEQ_API size_t ehrseq_model_parameter_count(const ehrseq_model* model);
/* Hourly probabilities for one stay. Hour h holds token ids
 * ids[offsets[h] .. offsets[h+1]); `offsets` has n_hours + 1 entries and
 * `probabilities` room for n_hours values. */
EHRSEQ_API ehrseq_status ehrseq_model_predict(const ehrseq_model* model, const int32_t* ids, const size_t* offsets,
                                              size_t n_hours, double* probabilities);

#ifdef __cplusplus
}
#endif

#endif
