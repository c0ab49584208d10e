#include <stdio.h>
#include "facekit.h"

int main(void) {
    FkAnchorSet *set = NULL;
    if (fk_anchors_new(640, 640, &set) != FK_STATUS_OK) return 1;
    if (fk_anchors_len(set) != 68250) return 2;
    fk_anchors_free(set);

    if (fk_anchors_new(0, 10, &set) != FK_STATUS_INVALID_ARGUMENT) return 3;
    if (fk_last_error_message() == NULL) return 4;

    FkBox boxes[2] = {{0, 0, 10, 10}, {1, 1, 11, 11}};
    double scores[2] = {0.2, 0.9};
    size_t keep[2], n = 0;
    if (fk_nms(boxes, scores, 2, 0.5, 750, keep, &n) != FK_STATUS_OK) return 5;
    if (n != 1 || keep[0] != 1) return 6;

    printf("ok\n");
    return 0;
}
