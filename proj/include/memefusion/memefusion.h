/* memefusion: troll / not_troll meme classification from caption and image
 * embeddings.
 *
 * Plain C interface over the C++ core. Objects are opaque handles created
 * and released by this library. Every fallible call returns an mf_status;
 * on failure mf_last_error() describes the problem for the calling thread.
 * Strings returned through `char**` are owned by the caller and released
 * with mf_string_free().
 */
#ifndef MEMEFUSION_MEMEFUSION_H_
#define MEMEFUSION_MEMEFUSION_H_

#include <stddef.h>
#include <stdint.h>

#if defined(MEMEFUSION_BUILDING_LIBRARY)
#define MF_API __attribute__((visibility("default")))
#else
#define MF_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mf_status {
  MF_OK = 0,
  MF_ERR_INVALID_ARGUMENT = 1,
  MF_ERR_VALIDATION = 2,
  MF_ERR_SHAPE = 3,
  MF_ERR_INPUT = 4,
  MF_ERR_PREPROCESS = 5,
  MF_ERR_LOAD = 6,
  MF_ERR_CONFIG = 7,
  MF_ERR_FINGERPRINT = 8,
  MF_ERR_FORMAT = 9,
  MF_ERR_NUMERIC = 10,
  MF_ERR_IO = 11,
  MF_ERR_INTERNAL = 12
} mf_status;

/* Message for the last failed call on this thread ("" if none). */
MF_API const char* mf_last_error(void);
MF_API const char* mf_status_name(mf_status status);
/* Process exit code for a status: 0 ok, 2 usage/validation, 3 artifact
 * mismatch, 4 runtime/numeric failure. */
MF_API int mf_status_exit_code(mf_status status);
MF_API const char* mf_version(void);
MF_API void mf_string_free(char* s);

/* ---- configuration ---------------------------------------------------- */

typedef struct mf_config mf_config;

/* Defaults: fusion model, 20 epochs, batch 32, lr 1e-3, seed 0. */
MF_API mf_status mf_config_create(mf_config** out);
MF_API mf_status mf_config_clone(const mf_config* config, mf_config** out);
/* Merges a flat JSON object of overrides; unknown keys are rejected. */
MF_API mf_status mf_config_merge_json(mf_config* config, const char* json);
MF_API mf_status mf_config_merge_file(mf_config* config, const char* path);
MF_API mf_status mf_config_to_json(const mf_config* config, char** out);
/* Hex SHA-256 binding checkpoints to encoder and preprocessing settings. */
MF_API mf_status mf_config_fingerprint(const mf_config* config, char** out);
MF_API void mf_config_free(mf_config* config);

/* ---- datasets --------------------------------------------------------- */

typedef struct mf_split mf_split;

typedef enum mf_split_role {
  MF_SPLIT_TRAIN = 0,
  MF_SPLIT_VAL = 1,
  MF_SPLIT_TEST = 2
} mf_split_role;

typedef struct mf_split_counts {
  uint64_t troll;
  uint64_t not_troll;
  uint64_t unlabeled;
} mf_split_counts;

/* Reads `id,image_file,caption[,label]`; `delimiter` 0 means ','. Image
 * paths resolve against images_root and are decoded at load. */
MF_API mf_status mf_split_load(const char* manifest, const char* images_root,
                               mf_split_role role, char delimiter, mf_split** out);
MF_API size_t mf_split_size(const mf_split* split);
MF_API mf_status mf_split_counts_get(const mf_split* split, mf_split_counts* out);
/* {"troll":N,"not_troll":M,"unlabeled":K} */
MF_API mf_status mf_split_stats_json(const mf_split* split, char** out);
MF_API mf_status mf_split_holdout(const mf_split* split, double fraction, uint64_t seed,
                                  mf_split** rest, mf_split** held_out);
MF_API void mf_split_free(mf_split* split);

/* ---- encoders --------------------------------------------------------- */

typedef struct mf_encoders mf_encoders;

/* Loads the encoders the configured model kind needs. */
MF_API mf_status mf_encoders_load(const mf_config* config, mf_encoders** out);
/* Writes `dim` floats for one caption / one image file into `out`; `dim`
 * must equal the encoder's output width (768 text, 256 image). */
MF_API mf_status mf_encoders_embed_text(const mf_encoders* encoders, const mf_config* config,
                                        const char* caption, float* out, size_t dim);
MF_API mf_status mf_encoders_embed_image(const mf_encoders* encoders, const mf_config* config,
                                         const char* image_path, float* out, size_t dim);
MF_API void mf_encoders_free(mf_encoders* encoders);

/* Seeded random weights in the on-disk encoder layout, for offline smoke
 * runs. text_layers / text_intermediate of 0 select 12 / 3072. */
MF_API mf_status mf_write_random_text_encoder(const char* dir, uint64_t seed, int text_layers,
                                              int text_intermediate);
MF_API mf_status mf_write_random_image_encoder(const char* dir, uint64_t seed);

/* ---- training and runs ------------------------------------------------ */

typedef struct mf_run mf_run;

/* `val` may be NULL. `cache_dir` NULL disables the embedding cache. */
MF_API mf_status mf_train(const mf_split* train, const mf_split* val, const mf_config* config,
                          mf_encoders* encoders, const char* cache_dir, mf_run** out);
/* Writes config.json, history.jsonl, checkpoint.{json,safetensors}, seed.txt. */
MF_API mf_status mf_run_save(const mf_run* run, const char* dir);
/* `expected` (nullable) is checked against the stored fingerprint. */
MF_API mf_status mf_run_load(const char* dir, const mf_config* expected, mf_run** out);
MF_API mf_status mf_run_config(const mf_run* run, mf_config** out);
/* JSON array of per-epoch records (empty for loaded runs). */
MF_API mf_status mf_run_history_json(const mf_run* run, char** out);
/* {"kind", "input_width", "hidden_widths", "dropout", "fusion_taps", ...} */
MF_API mf_status mf_run_describe_json(const mf_run* run, char** out);
/* Applies fine-tuned encoder weights stored in the run, if any. */
MF_API mf_status mf_run_restore_encoders(const mf_run* run, mf_encoders* encoders);
MF_API void mf_run_free(mf_run* run);

/* ---- evaluation ------------------------------------------------------- */

typedef struct mf_report mf_report;

typedef struct mf_metrics {
  double accuracy;
  double f1_troll;
  double precision_weighted;
  double recall_weighted;
  double f1_weighted;
  uint64_t troll_troll; /* gold troll, predicted troll */
  uint64_t troll_not_troll;
  uint64_t not_troll_troll;
  uint64_t not_troll_not_troll;
} mf_metrics;

MF_API mf_status mf_evaluate(const mf_run* run, const mf_split* split,
                             const mf_encoders* encoders, const char* cache_dir,
                             mf_report** out);
/* Report from raw confusion counts, as the evaluator would produce it. */
MF_API mf_status mf_report_from_counts(const char* model, uint64_t troll_troll,
                                       uint64_t troll_not_troll, uint64_t not_troll_troll,
                                       uint64_t not_troll_not_troll, mf_report** out);
MF_API mf_status mf_report_metrics(const mf_report* report, mf_metrics* out);
MF_API mf_status mf_report_set_model(mf_report* report, const char* model);
MF_API mf_status mf_report_to_json(const mf_report* report, char** out);
MF_API mf_status mf_report_from_json(const char* json, mf_report** out);
MF_API mf_status mf_report_write(const mf_report* report, const char* path);
MF_API mf_status mf_report_read(const char* path, mf_report** out);
MF_API void mf_report_free(mf_report* report);

typedef enum mf_table_format { MF_TABLE_MARKDOWN = 0, MF_TABLE_CSV = 1 } mf_table_format;

/* Columns Accuracy, F1(T), F1(w), P(w), R(w), three decimals. */
MF_API mf_status mf_render_comparison(const mf_report* const* reports, size_t count,
                                      mf_table_format format, char** out);
MF_API mf_status mf_render_confusion_csv(const mf_report* report, char** out);
MF_API mf_status mf_write_confusion_heatmap(const mf_report* report, const char* png_path);

/* ---- prediction ------------------------------------------------------- */

typedef struct mf_predictions mf_predictions;

MF_API mf_status mf_predict(const mf_run* run, const mf_split* split,
                            const mf_encoders* encoders, const char* cache_dir,
                            mf_predictions** out);
MF_API size_t mf_predictions_size(const mf_predictions* predictions);
/* `id` stays valid until the predictions are freed. */
MF_API mf_status mf_predictions_get(const mf_predictions* predictions, size_t index,
                                    const char** id, int* is_troll, double* probability);
/* `id,label,probability` */
MF_API mf_status mf_predictions_write_csv(const mf_predictions* predictions, const char* path);
MF_API void mf_predictions_free(mf_predictions* predictions);

#ifdef __cplusplus
}
#endif

#endif /* MEMEFUSION_MEMEFUSION_H_ */
