#include <stdio.h>
#include <string.h>

#include "icl_dst.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        IclStatus st_ = (call);                                            \
        if (st_ != ICL_STATUS_OK) {                                        \
            fprintf(stderr, "%s -> %d: %s\n", #call, st_, icl_last_error()); \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    const char *schema_json =
        "{\"domains\":[{\"name\":\"hotel\",\"slots\":[{\"name\":\"area\",\"categorical\":true,"
        "\"values\":[\"east\",\"west\"]},{\"name\":\"name\"}]},"
        "{\"name\":\"restaurant\",\"slots\":[{\"name\":\"area\",\"categorical\":true,"
        "\"values\":[\"east\",\"west\"]}]}]}";
    IclSchema *schema = NULL;
    CHECK(icl_schema_new(schema_json, &schema));

    char *parsed = NULL;
    CHECK(icl_parse_completion(schema,
        "state.restaurant = find_restaurant(area=state.hotel.area)", &parsed));
    if (strstr(parsed, "\"ref\":\"hotel-area\"") == NULL) {
        fprintf(stderr, "unexpected parse: %s\n", parsed);
        return 1;
    }
    icl_string_free(parsed);

    double sim = -1.0;
    CHECK(icl_sim_f1("{\"updates\":{\"hotel-area\":\"east\"}}",
                     "{\"updates\":{\"hotel-area\":\"west\"}}", &sim));
    if (sim != 0.5) {
        fprintf(stderr, "sim_f1 = %f\n", sim);
        return 1;
    }

    IclStatus bad = icl_sim_f1("{", "{}", &sim);
    if (bad != ICL_STATUS_INVALID_JSON || icl_last_error() == NULL) {
        fprintf(stderr, "expected INVALID_JSON\n");
        return 1;
    }

    icl_schema_free(schema);
    printf("ok %s\n", icl_version());
    return 0;
}
