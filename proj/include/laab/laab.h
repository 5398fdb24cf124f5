#ifndef LAAB_LAAB_H
#define LAAB_LAAB_H

/* C interface to the laab engine. Every function returns a status code;
 * on failure laab_last_error() describes the problem (thread-local, valid
 * until the next call on the same thread). Strings returned through `char**`
 * are owned by the caller and released with laab_string_free. */

#include <stddef.h>

#if defined(_WIN32)
#define LAAB_API __declspec(dllexport)
#else
#define LAAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum laab_status {
  LAAB_OK = 0,
  LAAB_ERR_INVALID_ARGUMENT = 1,
  LAAB_ERR_VALIDATION = 2,
  LAAB_ERR_NUMERIC = 3,
  LAAB_ERR_IO = 4,
  LAAB_ERR_INTERNAL = 5
} laab_status;

typedef struct laab_pack laab_pack;
typedef struct laab_model laab_model;

LAAB_API const char* laab_last_error(void);
LAAB_API const char* laab_version(void);
LAAB_API void laab_string_free(char* s);

/* Packs */
LAAB_API laab_status laab_pack_open(const char* dir, laab_pack** out);
LAAB_API void laab_pack_close(laab_pack* pack);
LAAB_API laab_status laab_pack_info_json(const laab_pack* pack, char** out_json);
/* LAAB_ERR_VALIDATION when issues were found; the JSON array lists them. */
LAAB_API laab_status laab_validate_pack(const char* dir, char** out_issues_json);
LAAB_API laab_status laab_synth(const char* config_json, const char* out_dir);

/* options_json keys: feature ("hidden"|"logits"|"attn"), top_p,
 * top_p_judgment, kl_estimator ("mean"|"per_sample"), kval_r, kval_j, seed. */
LAAB_API laab_status laab_derive(const char* raw_dir, const char* out_dir,
                                 const char* options_json, char** out_summary_json);
/* config_json: training config (may be NULL for defaults). */
LAAB_API laab_status laab_select_layer(const char* raw_dir, const char* config_json,
                                       char** out_json);

/* feature may be NULL when the pack is derived or the config names it. */
LAAB_API laab_status laab_train(const char* pack_dir, const char* feature,
                                const char* config_json, const char* out_dir, int use_logic,
                                char** out_summary_json);

/* Models */
LAAB_API laab_status laab_model_load(const char* ckpt_dir, laab_model** out);
LAAB_API void laab_model_free(laab_model* model);
/* mode: "r", "dj" or "fused". Output is JSON Lines, one record per sample. */
LAAB_API laab_status laab_predict(const laab_model* model, const laab_pack* pack,
                                  const char* mode, char** out_jsonl);
/* split: "train", "val", "test" or NULL for all records. baseline may be NULL. */
LAAB_API laab_status laab_evaluate(const laab_model* model, const laab_pack* pack,
                                   const laab_model* baseline, const char* split,
                                   char** out_report_json, char** out_table);

#ifdef __cplusplus
}
#endif

#endif
