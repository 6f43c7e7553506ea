#include <stdio.h>
#include <string.h>

#include "actchange.h"

int main(void) {
    ActModelDims dims = {1024, 512, 512, 4, 512, 1, 10};
    ActParamCount count;
    if (actchange_count_params(&dims, &count) != ACT_STATUS_OK || count.mlp != 267786) {
        fprintf(stderr, "count_params failed\n");
        return 1;
    }
    double scores[3] = {0.2, 0.9, 0.4};
    unsigned char relevant[3] = {1, 0, 0};
    double ap = 0.0;
    if (actchange_average_precision(scores, relevant, 3, &ap) != ACT_STATUS_OK || ap != 1.0 / 3.0) {
        fprintf(stderr, "average_precision failed\n");
        return 1;
    }
    ActModel *model = NULL;
    if (actchange_model_load("/nonexistent.ckpt", &model) == ACT_STATUS_OK || model != NULL ||
        strlen(actchange_last_error()) == 0) {
        fprintf(stderr, "load of a missing file did not fail\n");
        return 1;
    }
    actchange_model_free(NULL);
    printf("ok %s\n", actchange_version());
    return 0;
}
