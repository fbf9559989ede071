/* C API for the mmpr retrieval engine.
 *
 * All functions return MMPR_OK on success; on failure the thread-local
 * message from mmpr_last_error() describes the problem. Handles are opaque
 * and must be released with their matching destroy function.
 */
#ifndef MMPR_H
#define MMPR_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mmpr_status {
  MMPR_OK = 0,
  MMPR_ERR_IO = 1,
  MMPR_ERR_PARSE = 2,
  MMPR_ERR_INVALID_ARG = 3,
  MMPR_ERR_NOT_FOUND = 4,
  MMPR_ERR_STATE = 5,
  MMPR_ERR_NUMERIC = 6,
  MMPR_ERR_INTERNAL = 7
} mmpr_status;

typedef struct mmpr_config mmpr_config;
typedef struct mmpr_engine mmpr_engine;
typedef struct mmpr_result mmpr_result;

const char* mmpr_version(void);
const char* mmpr_last_error(void);

/* Configuration ----------------------------------------------------- */
mmpr_status mmpr_config_create(mmpr_config** out);
mmpr_status mmpr_config_load_file(mmpr_config* cfg, const char* path);
mmpr_status mmpr_config_apply_env(mmpr_config* cfg);
mmpr_status mmpr_config_set(mmpr_config* cfg, const char* key, const char* value);
/* Returns NULL if the key is absent; the pointer is valid until the next
 * call on the same config. */
const char* mmpr_config_get(mmpr_config* cfg, const char* key);
void mmpr_config_destroy(mmpr_config* cfg);

/* Engine + pipeline stages ------------------------------------------ */
mmpr_status mmpr_engine_create(const mmpr_config* cfg, mmpr_engine** out);
void mmpr_engine_destroy(mmpr_engine* eng);

/* Each stage is resumable: a rerun with unchanged inputs is a no-op.
 * skipped (optional) is set to 1 when the stage was satisfied by a
 * manifest match. */
mmpr_status mmpr_stage_ingest(mmpr_engine* eng, int* skipped);
mmpr_status mmpr_stage_fit_codebooks(mmpr_engine* eng, int* skipped);
mmpr_status mmpr_stage_quantize(mmpr_engine* eng, int* skipped);
mmpr_status mmpr_stage_train_user_rep(mmpr_engine* eng, int* skipped);
mmpr_status mmpr_stage_build_graph(mmpr_engine* eng, int* skipped);
mmpr_status mmpr_stage_retrieve(mmpr_engine* eng, int* skipped);
mmpr_status mmpr_stage_encode(mmpr_engine* eng, int* skipped);
mmpr_status mmpr_stage_export(mmpr_engine* eng, int* skipped);
mmpr_status mmpr_run_pipeline(mmpr_engine* eng);

mmpr_status mmpr_bench(mmpr_engine* eng, size_t n_queries,
                       const char* report_path);

/* Single-pair retrieval against a finished run ----------------------- */
mmpr_status mmpr_retrieve_pair(mmpr_engine* eng, const char* user,
                               const char* item, int emit_prompt,
                               mmpr_result** out);
size_t mmpr_result_path_count(const mmpr_result* res);
size_t mmpr_result_path_hops(const mmpr_result* res, size_t path);
/* Node ids are "u:<id>" / "i:<id>"; pointers valid for the result's
 * lifetime. */
const char* mmpr_result_path_node(const mmpr_result* res, size_t path,
                                  size_t node);
double mmpr_result_path_length(const mmpr_result* res, size_t path);
const char* mmpr_result_prompt(const mmpr_result* res);
void mmpr_result_destroy(mmpr_result* res);

#ifdef __cplusplus
}
#endif

#endif /* MMPR_H */
