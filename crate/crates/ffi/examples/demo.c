#include <stdio.h>
#include "memaudit.h"

int main(void) {
  ma_dataset *ds = NULL;
  if (ma_dataset_synth("synth", 30, 1, &ds) != MA_OK) {
    fprintf(stderr, "load failed: %s\n", ma_last_error());
    return 1;
  }
  ma_patch *patch = NULL;
  if (ma_patch_glyph('A', &patch) != MA_OK) return 1;
  ma_dataset *canary = NULL;
  if (ma_inject_canary(ds, 3, patch, &canary) != MA_OK) return 1;
  ma_model *model = NULL;
  if (ma_model_build("MLP-1", 10, 0, 0, 42, &model) != MA_OK) return 1;
  printf("params=%zu images=%zu\n", ma_model_param_count(model), ma_dataset_len(canary));
  ma_model_free(model);
  ma_dataset_free(canary);
  ma_patch_free(patch);
  ma_dataset_free(ds);
  return 0;
}
