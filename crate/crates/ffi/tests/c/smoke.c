#include <math.h>
#include <stdio.h>
#include <string.h>

#include "imba_lens.h"

#define CHECK(cond)                                                        \
    do {                                                                   \
        if (!(cond)) {                                                     \
            const char *msg = imba_last_error_message();                   \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond, \
                    msg ? msg : "no message");                             \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(int argc, char **argv) {
    if (argc != 2) {
        fprintf(stderr, "usage: smoke FIXTURE_DIR\n");
        return 2;
    }
    char path[4096];

    ImbaManifest *manifest = NULL;
    snprintf(path, sizeof path, "%s/manifest.json", argv[1]);
    CHECK(imba_manifest_load(path, &manifest) == ImbaStatus_Ok);
    CHECK(imba_manifest_num_images(manifest) == 2);

    ImbaAnnotations *boxes = NULL;
    snprintf(path, sizeof path, "%s/boxes.csv", argv[1]);
    CHECK(imba_annotations_load(path, manifest, &boxes) == ImbaStatus_Ok);

    ImbaHead *head = NULL;
    snprintf(path, sizeof path, "%s/head.fmap", argv[1]);
    CHECK(imba_head_load(path, NULL, &head) == ImbaStatus_Ok);

    char *json = NULL;
    CHECK(imba_alignment_report_json(manifest, boxes, head, ImbaCamOrder_NormalizeFirst, &json) == ImbaStatus_Ok);
    CHECK(strstr(json, "\"mean_iobb\"") != NULL);
    printf("%s\n", json);
    imba_string_free(json);

    ImbaLossParams focal = {ImbaLossKind_Focal, 0.25, 2.0, 0.0};
    double wp = 0, wm = 0;
    CHECK(imba_class_weights(&focal, NULL, 0.5, &wp, &wm) == ImbaStatus_Ok);
    CHECK(wp == 0.0625 && wm == 0.1875);

    double map[4] = {1.0, 0.0, 0.0, 1.0};
    ImbaBox box = {0.0, 0.0, 1.0, 1.0};
    ImbaAlignment a;
    CHECK(imba_soft_alignment(map, 2, 2, &box, 1, &a) == ImbaStatus_Ok);
    CHECK(a.iobb == 1.0 && a.ior == 0.5 && a.box_area == 1 && !a.zero_mass);

    ImbaTensor *t = NULL;
    CHECK(imba_tensor_read("/nonexistent/x.fmap", &t) == ImbaStatus_Io);
    CHECK(imba_last_error_message() != NULL);

    imba_head_free(head);
    imba_annotations_free(boxes);
    imba_manifest_free(manifest);
    printf("smoke ok %s\n", imba_version());
    return 0;
}
