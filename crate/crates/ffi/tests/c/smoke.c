#include <stdio.h>
#include <string.h>

#include "discontinuity.h"

static int check(int ok, const char *what) {
    if (!ok) {
        const char *err = dc_last_error();
        fprintf(stderr, "failed: %s (%s)\n", what, err ? err : "no error text");
    }
    return ok ? 0 : 1;
}

int main(int argc, char **argv) {
    int failures = 0;
    if (argc < 2) {
        fprintf(stderr, "usage: smoke <checkpoint>\n");
        return 2;
    }

    DcModel *model = NULL;
    failures += check(dc_model_load(argv[1], &model) == DC_STATUS_OK, "load");
    if (model == NULL) {
        return 1;
    }

    size_t in_dim = 0, out_dim = 0;
    failures += check(dc_model_dims(model, &in_dim, &out_dim) == DC_STATUS_OK, "dims");
    failures += check(in_dim == 3 && out_dim == 2, "dims values");

    double x[6] = {0.1, 0.2, 0.3, 0.9, 0.8, 0.7};
    double y[4];
    failures += check(dc_model_forward(model, x, 2, y, 4) == DC_STATUS_OK, "forward");
    printf("%.17g %.17g %.17g %.17g\n", y[0], y[1], y[2], y[3]);
    failures += check(dc_model_forward(model, x, 2, y, 3) == DC_STATUS_DIMENSION, "forward length");

    double d_m = 0.0;
    size_t i = 0, j = 0;
    failures += check(dc_model_min_pairwise(model, x, 2, &d_m, &i, &j) == DC_STATUS_OK, "d_m");
    failures += check(d_m > 0.0 && i == 0 && j == 1, "d_m values");
    dc_model_free(model);

    DcModel *missing = NULL;
    failures += check(dc_model_load("/nonexistent/model.adpr", &missing) == DC_STATUS_IO, "missing file");
    failures += check(dc_last_error() != NULL && strlen(dc_last_error()) > 0, "error text");

    double ratio = 0.0;
    failures += check(dc_boundary_expansion(2, 8, &ratio) == DC_STATUS_OK && ratio == 2.75, "boundary");
    return failures == 0 ? 0 : 1;
}
