/* C interface of the online stereo adaptation library.
 *
 * All functions return an omla_status. On failure a one-line message is
 * available from omla_last_error() until the next call on the same thread.
 * Strings are UTF-8 and NUL-terminated. Handles are opaque.
 */
#ifndef OMLA_OMLA_H
#define OMLA_OMLA_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define OMLA_API __declspec(dllexport)
#else
#define OMLA_API __attribute__((visibility("default")))
#endif

typedef enum omla_status {
  OMLA_OK = 0,
  OMLA_ERR_CONFIG = 1,              /* malformed config, unknown key, bad value */
  OMLA_ERR_IO = 2,                  /* missing or unreadable file or directory */
  OMLA_ERR_FORMAT = 3,              /* corrupt or truncated file */
  OMLA_ERR_UNSUPPORTED_VERSION = 4, /* file written by another format version */
  OMLA_ERR_LAYOUT = 5,              /* checkpoint does not match the network */
  OMLA_ERR_CONTRACT = 6,            /* violated precondition */
  OMLA_ERR_SHAPE = 7,               /* tensor shape mismatch */
  OMLA_ERR_INVALID_ARGUMENT = 8,    /* NULL handle or path */
  OMLA_ERR_INTERNAL = 9
} omla_status;

typedef struct omla_config omla_config;

OMLA_API const char* omla_version(void);
OMLA_API const char* omla_status_name(omla_status status);
/* Message of the last failure on this thread; "" after a success. */
OMLA_API const char* omla_last_error(void);

/* Configuration with every key at its default. */
OMLA_API omla_status omla_config_new(omla_config** out);
OMLA_API omla_status omla_config_load(const char* path, omla_config** out);
OMLA_API omla_status omla_config_set(omla_config* config, const char* key, const char* value);
/* Copies the value into buf (truncated to buflen - 1 bytes); *needed receives
 * the full length without the terminator. buf may be NULL when buflen is 0. */
OMLA_API omla_status omla_config_get(const omla_config* config, const char* key, char* buf, size_t buflen,
                                     size_t* needed);
OMLA_API void omla_config_free(omla_config* config);
/* Static text describing every key, its default and provenance. */
OMLA_API const char* omla_config_help(void);

OMLA_API omla_status omla_gen_data(const omla_config* config, const char* out_dir);
/* mode: "standard" or "meta". init_checkpoint may be NULL or "". */
OMLA_API omla_status omla_pretrain(const omla_config* config, const char* mode, const char* data_dir,
                                   const char* init_checkpoint, const char* out_checkpoint);
/* method: "naive", "meta", "ofda" or "omla". Also writes out_trace + ".pred". */
OMLA_API omla_status omla_adapt(const omla_config* config, const char* checkpoint, const char* video,
                                const char* method, const char* out_trace);
OMLA_API omla_status omla_eval(const omla_config* config, const char* trace, const char* video,
                               const char* out_report);
OMLA_API omla_status omla_report(const omla_config* config, const char* report_dir, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* OMLA_OMLA_H */
