/* Minimal C client: train on three records, rank, then simulate.
 *
 *   cargo build -p msnp-ffi --release
 *   cc crates/ffi/examples/demo.c -Icrates/ffi/include \
 *      target/release/libmsnp_ffi.a -lpthread -ldl -lm -o demo
 */
#include <stdio.h>

#include "msnp.h"

static int fail(MsnpStatus s) {
    const char *msg = msnp_last_error_message();
    fprintf(stderr, "status %d: %s\n", (int)s, msg ? msg : "?");
    return 1;
}

int main(void) {
    const char *csv =
        "qid,contexts\n"
        "Q1,loc=home;time=evening\n"
        "Q2,loc=office;time=morning\n"
        "Q1,loc=home;time=morning\n";
    MsnpPredictor *p = NULL;
    MsnpStatus s = msnp_predictor_from_records_csv(csv, &p);
    if (s != MSNP_STATUS_OK) return fail(s);

    char *ranking = NULL;
    s = msnp_predictor_predict(p, "loc=home;time=morning", &ranking);
    if (s != MSNP_STATUS_OK) return fail(s);
    printf("%s\n", ranking);
    msnp_string_free(ranking);
    msnp_predictor_free(p);

    char *result = NULL;
    s = msnp_simulate("n_providers = 20\nseed = 3\n", "prefpush", &result);
    if (s != MSNP_STATUS_OK) return fail(s);
    printf("%s\n", result);
    msnp_string_free(result);
    return 0;
}
