#include <stdio.h>
#include <stdlib.h>
#include "g2i.h"

#define CHECK(call)                                                          \
    do {                                                                     \
        G2iStatus s_ = (call);                                               \
        if (s_ != G2I_STATUS_OK) {                                           \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_,                \
                    g2i_last_error_message());                               \
            return 1;                                                        \
        }                                                                    \
    } while (0)

int main(void) {
    size_t blocks[3] = {8, 8, 8};
    G2iGraph *graph = NULL;
    G2iImages *images = NULL;
    size_t rows, cols, channels;
    float *pixels;
    int64_t label;

    CHECK(g2i_graph_synth(blocks, 3, 0.5, 0.05, 9, 1.0, 1, &graph));
    CHECK(g2i_render(graph, 7, &images));
    CHECK(g2i_images_shape(images, &rows, &cols, &channels));
    pixels = malloc(rows * cols * channels * sizeof(float));
    CHECK(g2i_images_get(images, 0, pixels, rows * cols * channels, &label));
    printf("%zu %zu %zu %zu %lld\n", g2i_images_count(images), rows, cols, channels, (long long)label);
    if (g2i_graph_load(NULL, NULL, NULL, &graph) != G2I_STATUS_NULL_ARGUMENT) {
        return 2;
    }
    free(pixels);
    g2i_images_free(images);
    g2i_graph_free(graph);
    return 0;
}
