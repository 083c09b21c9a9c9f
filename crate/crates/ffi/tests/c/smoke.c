#include <stdio.h>
#include <string.h>
#include "feddt.h"

#define CHECK(cond) do { if (!(cond)) { fprintf(stderr, "failed: %s (%s)\n", #cond, fdt_last_error() ? fdt_last_error() : ""); return 1; } } while (0)

int main(void) {
    FdtCostTotals c;
    CHECK(fdt_cost(120, 6, 6, 1, 1, &c) == FDT_STATUS_OK);
    CHECK(c.fedt_total == 1440 && c.feddt_series_total == 840);
    CHECK(c.feddt_closed_form_num == 140 && c.feddt_closed_form_den == 1);

    CHECK(fdt_cost(120, 4, 6, 1, 1, &c) == FDT_STATUS_CONFIG);
    CHECK(fdt_last_error() != NULL);

    FdtModelConfig cfg;
    CHECK(fdt_model_config_default(&cfg) == FDT_STATUS_OK);
    FdtModel *m = NULL;
    CHECK(fdt_model_new(&cfg, 7, &m) == FDT_STATUS_OK);
    size_t layers = 0;
    CHECK(fdt_model_layers(m, &layers) == FDT_STATUS_OK && layers == 1);
    CHECK(fdt_model_grow(m, 1) == FDT_STATUS_OK);
    CHECK(fdt_model_grow(m, 5) == FDT_STATUS_GROWTH_CAP);

    uint8_t *buf = NULL;
    size_t len = 0;
    CHECK(fdt_model_serialize(m, false, &buf, &len) == FDT_STATUS_OK && len > 0);
    FdtModel *back = NULL;
    CHECK(fdt_model_deserialize(&cfg, buf, len, &back) == FDT_STATUS_OK);
    fdt_bytes_free(buf, len);

    uint32_t tokens[3] = {1, 2, 3};
    double a[2 * 16], b[2 * 16];
    CHECK(fdt_model_infer(m, tokens, 3, 2, a, 32) == FDT_STATUS_OK);
    CHECK(fdt_model_infer(back, tokens, 3, 2, b, 32) == FDT_STATUS_OK);
    CHECK(memcmp(a, b, sizeof a) == 0);
    CHECK(fdt_model_infer(m, tokens, 3, 2, a, 31) == FDT_STATUS_INVALID_ARGUMENT);

    fdt_model_free(back);
    fdt_model_free(m);
    printf("ok %s\n", fdt_version());
    return 0;
}
