/* C API for the memaudit toolkit.
 *
 * All fallible functions return ma_status; on failure, ma_last_error()
 * returns a thread-local message valid until the next failing call on the
 * same thread. Handles are opaque and owned: free each with its matching
 * *_free function exactly once.
 */

#ifndef MEMAUDIT_H
#define MEMAUDIT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ma_status {
  MA_OK = 0,
  MA_ERR_INVALID_ARGUMENT = 1,
  MA_ERR_IO = 2,
  MA_ERR_FORMAT = 3,
  MA_ERR_NUMERIC = 4,
  MA_ERR_NULL_POINTER = 5,
} ma_status;

typedef struct ma_dataset ma_dataset;
typedef struct ma_model ma_model;
typedef struct ma_patch ma_patch;
typedef struct ma_probe_triple ma_probe_triple;

typedef struct ma_mscore {
  double m;
  double t_stat;
  double p_value;
  size_t n;
} ma_mscore;

typedef struct ma_mwscore {
  double m_w;
  double mean_p_unique;
  double mean_p_random;
  size_t n;
} ma_mwscore;

const char *ma_last_error(void);

/* Datasets */
ma_status ma_dataset_load_idx(const char *images_path, const char *labels_path,
                              ma_dataset **out);
ma_status ma_dataset_load_cifar10(const char *const *paths, size_t n_paths,
                                  ma_dataset **out);
ma_status ma_dataset_synth(const char *name, size_t limit, uint64_t seed,
                           ma_dataset **out);
size_t ma_dataset_len(const ma_dataset *ds);
ma_status ma_dataset_shape(const ma_dataset *ds, size_t *h, size_t *w,
                           size_t *c);
void ma_dataset_free(ma_dataset *ds);

/* Patches and canaries */
ma_status ma_patch_glyph(char letter, ma_patch **out);
ma_status ma_patch_random(uint64_t seed, ma_patch **out);
void ma_patch_free(ma_patch *p);
ma_status ma_inject_canary(const ma_dataset *ds, size_t index,
                           const ma_patch *patch, ma_dataset **out);

/* Models */
ma_status ma_model_build(const char *arch, size_t num_classes, int dropout,
                         int batchnorm, uint64_t seed, ma_model **out);
ma_status ma_model_load_weights(ma_model *model, const char *path);
ma_status ma_model_save_weights(const ma_model *model, const char *path);
size_t ma_model_param_count(const ma_model *model);
ma_status ma_model_set_mode(ma_model *model, int train);
ma_status ma_model_predict(const ma_model *model, const float *pixels,
                           size_t pixel_count, float *probs_out,
                           size_t probs_len);
void ma_model_free(ma_model *model);

/* Scores */
ma_status ma_probe_triple_build(const ma_dataset *ood_source, size_t target_h,
                                size_t target_w, size_t target_c, size_t n,
                                const ma_patch *z_u, uint64_t seed,
                                ma_probe_triple **out);
void ma_probe_triple_free(ma_probe_triple *t);
ma_status ma_m_score(const ma_model *model, const ma_probe_triple *triple,
                     int paired, ma_mscore *out);
ma_status ma_mw_score(const ma_model *model, const ma_dataset *dataset,
                      size_t label, const ma_patch *z_u, uint64_t seed,
                      ma_mwscore *out);

#ifdef __cplusplus
}
#endif

#endif /* MEMAUDIT_H */
