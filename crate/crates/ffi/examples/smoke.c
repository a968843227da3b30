/* Minimal C client: open a workspace, classify, build, read all answers. */
#include <assert.h>
#include <stdint.h>
#include <stdio.h>

#include "starq.h"

int main(int argc, char **argv) {
    if (argc < 2) {
        fprintf(stderr, "usage: smoke <workspace.toml>\n");
        return 64;
    }
    SqWorkspace *ws = NULL;
    if (sq_workspace_open(argv[1], &ws) != SQ_OK) {
        fprintf(stderr, "open: %s\n", sq_last_error());
        return 1;
    }
    char *json = NULL;
    int verdict = sq_workspace_classify_json(ws, &json);
    printf("verdict_code=%d\n%s\n", verdict, json);
    sq_string_free(json);
    if (verdict != SQ_OK) {
        sq_workspace_free(ws);
        return verdict;
    }
    SqEngine *engine = NULL;
    if (sq_workspace_build(ws, 0, &engine) != SQ_OK) {
        fprintf(stderr, "build: %s\n", sq_last_error());
        sq_workspace_free(ws);
        return 1;
    }
    char *count = NULL;
    sq_engine_count(engine, &count);
    printf("count=%s\n", count);
    sq_string_free(count);
    char *line = NULL;
    for (uint64_t i = 1; sq_engine_get_csv(engine, ws, i, &line) == SQ_OK; i++) {
        printf("%s\n", line);
        sq_string_free(line);
    }
    sq_engine_free(engine);
    sq_workspace_free(ws);
    return 0;
}
