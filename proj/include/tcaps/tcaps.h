#ifndef TCAPS_H
#define TCAPS_H

#include <stddef.h>
#include <stdint.h>

#if defined(TCAPS_BUILDING)
#define TCAPS_API __attribute__((visibility("default")))
#else
#define TCAPS_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tcaps_status {
  TCAPS_OK = 0,
  TCAPS_E_INVALID_ARGUMENT = 1,
  TCAPS_E_CONFIG = 2,
  TCAPS_E_IO = 3,
  TCAPS_E_FORMAT = 4,
  TCAPS_E_CHECKSUM = 5,
  TCAPS_E_VERSION = 6,
  TCAPS_E_NUMERIC = 7,
  TCAPS_E_SHAPE = 8,
  TCAPS_E_INTERNAL = 99
} tcaps_status;

/* Message of the last failed call on this thread; "" after a success. */
TCAPS_API const char* tcaps_last_error(void);
/* Stable lower-case token such as "config" or "checksum". */
TCAPS_API const char* tcaps_status_name(tcaps_status status);
TCAPS_API const char* tcaps_version(void);

/* Strings returned through char** out-parameters are owned by the caller. */
TCAPS_API void tcaps_free_string(char* s);

/* Canonical JSON for a builtin name or a config file path. */
TCAPS_API tcaps_status tcaps_config_resolve(const char* name_or_path, char** json_out);
/* Builtin config names, newline separated. */
TCAPS_API tcaps_status tcaps_builtin_names(char** names_out);
/* Validates a training config; NULL or "" yields the defaults. */
TCAPS_API tcaps_status tcaps_train_config_normalize(const char* json, char** json_out);

/* Writes via a temporary file and rename; readers never see a partial file. */
TCAPS_API tcaps_status tcaps_write_file(const char* path, const char* data, size_t size);

TCAPS_API tcaps_status tcaps_synth(size_t items, size_t views_per_item, size_t categories, size_t resolution,
                                   uint64_t seed, const char* out_dir, char** manifest_path_out);

/* A network plus its training state. */
typedef struct tcaps_model tcaps_model;

TCAPS_API tcaps_status tcaps_model_create(const char* network_config_json, uint64_t seed, tcaps_model** out);
TCAPS_API tcaps_status tcaps_model_load(const char* checkpoint_path, tcaps_model** out);
TCAPS_API void tcaps_model_free(tcaps_model* model);
TCAPS_API tcaps_status tcaps_model_save(tcaps_model* model, const char* checkpoint_path);
TCAPS_API tcaps_status tcaps_model_param_count(const tcaps_model* model, uint64_t* out);
TCAPS_API tcaps_status tcaps_model_epoch(const tcaps_model* model, uint64_t* out);
TCAPS_API tcaps_status tcaps_model_describe(const tcaps_model* model, char** table_out);
TCAPS_API tcaps_status tcaps_model_config_json(const tcaps_model* model, char** json_out);

typedef void (*tcaps_epoch_callback)(uint64_t epoch, double mean_loss, size_t steps, void* user);

/* Trains on the manifest's train split until the config's epoch count is
   reached. A model loaded from a checkpoint resumes where it stopped. */
TCAPS_API tcaps_status tcaps_model_train(tcaps_model* model, const char* manifest_path, const char* train_config_json,
                                         tcaps_epoch_callback on_epoch, void* user);

/* Eval-mode, argmax-masked embeddings of one split ("train", "query",
   "gallery") written to out_path. */
TCAPS_API tcaps_status tcaps_model_embed(tcaps_model* model, const char* manifest_path, const char* split,
                                         const char* out_path, size_t* count_out);

typedef struct tcaps_index tcaps_index;

TCAPS_API tcaps_status tcaps_index_load(const char* embeddings_path, tcaps_index** out);
TCAPS_API void tcaps_index_free(tcaps_index* index);
TCAPS_API tcaps_status tcaps_index_size(const tcaps_index* index, size_t* size_out, size_t* dim_out);
/* Fills up to k hits; *count_out receives min(k, size). */
TCAPS_API tcaps_status tcaps_index_query(const tcaps_index* index, const double* vector, size_t dim, size_t k,
                                         uint64_t* ids_out, double* distances_out, size_t* count_out);

typedef struct tcaps_recall tcaps_recall;

/* ks may be NULL with k_count 0 for the defaults. When both paths name the same
   file a query may retrieve itself. */
TCAPS_API tcaps_status tcaps_recall_compute(const char* query_path, const char* gallery_path, const size_t* ks,
                                            size_t k_count, tcaps_recall** out);
TCAPS_API void tcaps_recall_free(tcaps_recall* report);
TCAPS_API size_t tcaps_recall_k_count(const tcaps_recall* report);
TCAPS_API tcaps_status tcaps_recall_at(const tcaps_recall* report, size_t i, size_t* k_out, double* recall_out);
TCAPS_API tcaps_status tcaps_recall_json(const tcaps_recall* report, char** json_out);
TCAPS_API tcaps_status tcaps_recall_table(const tcaps_recall* report, char** table_out);

#ifdef __cplusplus
}
#endif

#endif
