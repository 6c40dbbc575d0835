#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include "pdenet.h"

static const char *CONFIG =
    "{\"pde\": {\"system\": {\"kind\": \"heat\", \"c\": 0.1}, \"fine_n\": 32, \"coarse_n\": 8}}";

int main(void) {
    PdenetModel *model = NULL;
    if (pdenet_model_exact(CONFIG, &model) != PDENET_STATUS_OK) {
        fprintf(stderr, "exact: %s\n", pdenet_last_error());
        return 1;
    }
    size_t c, nx, ny;
    pdenet_model_shape(model, &c, &nx, &ny);
    size_t len = c * nx * ny;
    double *u = malloc(len * sizeof(double));
    double *v = malloc(len * sizeof(double));
    for (size_t i = 0; i < len; i++) u[i] = 2.5;
    if (pdenet_model_step(model, u, v, len) != PDENET_STATUS_OK) return 2;
    for (size_t i = 0; i < len; i++)
        if (v[i] != 2.5) return 3;
    if (pdenet_model_step(model, u, v, len - 1) != PDENET_STATUS_SHAPE) return 4;
    char *eq = NULL;
    if (pdenet_model_equation(model, 0, 1e-3, &eq) != PDENET_STATUS_OK) return 5;
    printf("%zu %zu %zu %s\n", c, nx, ny, eq);
    pdenet_string_free(eq);
    pdenet_model_free(model);
    free(u);
    free(v);
    return 0;
}
