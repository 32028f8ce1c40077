#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "auxvae.h"

int main(int argc, char **argv) {
    if (argc < 2) return 64;
    AuxvaeModel *m = NULL;
    if (auxvae_model_load("/nonexistent", &m) != AUXVAE_STATUS_IO || m != NULL) return 1;
    if (strlen(auxvae_last_error_message()) == 0) return 2;
    if (auxvae_model_load(argv[1], &m) != AUXVAE_STATUS_OK) {
        fprintf(stderr, "%s\n", auxvae_last_error_message());
        return 3;
    }
    AuxvaeModelInfo info;
    if (auxvae_model_info(m, &info) != AUXVAE_STATUS_OK) return 4;
    size_t n = info.window_len * info.num_channels, na = info.baseline_len * info.num_channels;
    double *x = calloc(n, sizeof(double)), *xa = calloc(na, sizeof(double));
    double *probs = calloc(info.num_styles, sizeof(double));
    for (size_t i = 0; i < n; i++) x[i] = (double)(i % 7) / 7.0 - 0.5;
    for (size_t i = 0; i < na; i++) xa[i] = (double)(i % 5) / 5.0 - 0.5;
    double load = 0.0;
    if (auxvae_predict(m, x, info.window_len, xa, info.baseline_len, 4, 7, &load, probs) != AUXVAE_STATUS_OK) return 5;
    printf("%.17g", load);
    for (size_t l = 0; l < info.num_styles; l++) printf(" %.17g", probs[l]);
    printf("\n");
    auxvae_model_free(m);
    free(x);
    free(xa);
    free(probs);
    return 0;
}
