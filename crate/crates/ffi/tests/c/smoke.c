#include <math.h>
#include <stdio.h>
#include "conjlogit.h"

static int fail(const char *what) {
    const char *msg = conjlogit_last_error();
    fprintf(stderr, "%s: %s\n", what, msg ? msg : "(no message)");
    return 1;
}

int main(int argc, char **argv) {
    if (argc != 2) return 2;
    double v = 0.0;
    if (conjlogit_exp_vs_gamma(2.0, 5.0, 14.0, &v) != CONJLOGIT_STATUS_OK) return fail("exp_vs_gamma");
    if (fabs(v - pow(11.0, -14.0)) > 1e-12 * v) return fail("exp_vs_gamma value");
    if (conjlogit_exp_vs_gamma(-1.0, 1.0, 1.0, &v) != CONJLOGIT_STATUS_DOMAIN) return fail("domain");

    ConjlogitDataset *ds = NULL;
    if (conjlogit_dataset_load(argv[1], &ds) != CONJLOGIT_STATUS_OK) return fail("load");
    ConjlogitWorkspace *ws = NULL;
    if (conjlogit_workspace_new(ds, 200, &ws) != CONJLOGIT_STATUS_OK) return fail("workspace");
    conjlogit_dataset_free(ds);

    ConjlogitSpec *spec = NULL;
    const char *json = "{\"family\":\"independent_gamma\",\"b\":[1.0],\"n\":[1.0]}";
    if (conjlogit_spec_from_json(json, &spec) != CONJLOGIT_STATUS_OK) return fail("spec");
    double ll = 0.0, spread = 0.0;
    if (conjlogit_log_marginal(ws, spec, &ll, &spread) != CONJLOGIT_STATUS_OK) return fail("log_marginal");
    printf("%.17g %.17g\n", ll, spread);
    conjlogit_spec_free(spec);
    conjlogit_workspace_free(ws);
    return 0;
}
