/* Compiled as C to keep the public header C-clean. */
#include "ssmic/ssmic.h"

#include <string.h>

int ssmic_c_smoke(void) {
  ssmic_config* cfg = NULL;
  char* json = NULL;
  uint64_t digest = 0;
  int ok = 1;
  if (ssmic_config_default(&cfg) != SSMIC_OK) return 0;
  ok = ok && ssmic_config_to_json(cfg, &json) == SSMIC_OK && json && strstr(json, "ga_stages") != NULL;
  ok = ok && ssmic_config_digest(cfg, &digest) == SSMIC_OK && digest != 0;
  ok = ok && strcmp(ssmic_status_name(SSMIC_ERR_DIGEST), "SSMIC_ERR_DIGEST") == 0;
  ssmic_free_string(json);
  ssmic_config_free(cfg);
  return ok;
}
