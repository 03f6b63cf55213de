"""Deterministic fixture corpora shared across the test suite."""

from __future__ import annotations

import random

from ompforge.corpus import CorpusSample

# Fifteen pragma forms covering the shapes that dominate real OpenMP code,
# plus the two functionally equivalent reference pragmas used by the
# matching tests.
TOP15_PRAGMAS = [
    "#pragma omp parallel",
    "#pragma omp parallel for",
    "#pragma omp for",
    "#pragma omp critical",
    "#pragma omp barrier",
    "#pragma omp single",
    "#pragma omp atomic",
    "#pragma omp task",
    "#pragma omp simd",
    "#pragma omp master",
    "#pragma omp parallel for private(i)",
    "#pragma omp parallel private(tid)",
    "#pragma omp for schedule(dynamic)",
    "#pragma omp parallel for reduction(+:sum)",
    "#pragma omp threadprivate(counter)",
]

REFERENCE_PRAGMA_A = "#pragma omp parallel for reduction(+:sum) private(var)"
REFERENCE_PRAGMA_B = "#pragma omp parallel for private(var) reduction(+:sum)"


def loop_fixture_source() -> tuple[str, int]:
    """One C translation unit with 50+ pragma sites.

    Covers plain loops, nested braces, stacked pragmas, backslash
    continuations, while loops, bare compound scopes, single-statement
    scopes, and comment/string noise around them. Returns (source text,
    expected sample count).
    """
    chunks = []
    expected = 0

    for j, pragma in enumerate(TOP15_PRAGMAS * 3):  # 45 plain loop sites
        chunks.append(f"""
/* kernel {j} */
void kernel_{j}(int n, double *a{j}) {{
    double sum = 0; // running total
    int i, tid, counter = 0;
    {pragma}
    for (i = 0; i < n; i++) {{
        a{j}[i] = a{j}[i] * 2.0 + {j};
        sum += a{j}[i];
    }}
}}
""")
        expected += 1

    chunks.append("""
void nested_braces(int n, int m, double **grid) {
    #pragma omp parallel for collapse(2)
    for (int r = 0; r < n; r++) {
        for (int c = 0; c < m; c++) {
            if (grid[r][c] > 0) { grid[r][c] = 0; } else { grid[r][c] = 1; }
        }
    }
}
""")
    expected += 1

    chunks.append("""
void stacked(int n, double *v) {
    #pragma omp parallel
    #pragma omp for nowait
    for (int i = 0; i < n; i++) {
        v[i] = 0;
    }
}
""")
    expected += 2  # the stacked pair shares one scope

    chunks.append("""
void continued(int n, double *v, double total) {
    #pragma omp parallel for \\
        reduction(+:total) \\
        schedule(static, 8)
    for (int i = 0; i < n; i++) {
        total += v[i];
    }
}
""")
    expected += 1

    chunks.append("""
void whileloop(int n, int *flags) {
    int i = 0;
    #pragma omp critical
    while (i < n) {
        flags[i] = 1;
        i++;
    }
}
""")
    expected += 1

    chunks.append("""
void bare_scope(int x, int y) {
    #pragma omp parallel num_threads(4)
    {
        x = x + y;  /* block body */
        y = x - y;
    }
}
""")
    expected += 1

    chunks.append("""
void single_stmt(int *hits) {
    const char *note = "// not a comment: {";
    #pragma omp atomic
    hits[0]++;
}
""")
    expected += 1

    chunks.append("""
void nested_pragma(int n, double *v) {
    #pragma omp parallel shared(v)
    {
        #pragma omp for schedule(guided)
        for (int i = 0; i < n; i++) {
            v[i] = 1.0 / (i + 1);
        }
    }
}
""")
    expected += 2  # outer compound (inner pragma verbatim) plus inner loop

    chunks.append("""
void trailing_pragma_noise(void) {
    int z = 0;
    z++;
}
#pragma omp barrier
""")  # pragma with no following statement: warned, skipped

    return "".join(chunks), expected


def memorization_corpus() -> list[CorpusSample]:
    """20 mutually distinctive scopes sharing one multi-component pragma."""
    samples = []
    for j in range(20):
        scope = (f"for (int i = 0; i < len{j}; i++) "
                 f"{{ out{j}[i] = weigh{j}(in{j}[i]); }}")
        samples.append(CorpusSample(id=f"toy:{j}", language="c", scope=scope,
                                    pragma="#pragma omp parallel for private(i)"))
    return samples


# Each class pairs a scope marker with one pragma; first components are
# distinct across classes so chained generation can tell them apart once
# the marker token is in context.
SYNTHETIC_CLASSES = [
    ("relax", "#pragma omp for schedule(static)"),
    ("accum", "#pragma omp parallel for reduction(+:sum)"),
    ("offload", "#pragma omp target teams distribute"),
    ("vectorize", "#pragma omp simd"),
    ("spawn", "#pragma omp task firstprivate(depth)"),
    ("league", "#pragma omp teams distribute parallel for"),
    ("carve", "#pragma omp sections nowait"),
    ("solo", "#pragma omp single private(tmp)"),
    ("sweep", "#pragma omp taskloop grainsize(64)"),
    ("shard", "#pragma omp distribute dist_schedule(static,128)"),
]


def synthetic_corpus(per_class: int = 50) -> list[CorpusSample]:
    """Corpus whose scope endings deterministically imply the pragma.

    The class marker function name sits a fixed distance from the scope
    end, within reach of an order-13 model's context, while loop and
    buffer names vary per sample.
    """
    samples = []
    for cidx, (marker, pragma) in enumerate(SYNTHETIC_CLASSES):
        for v in range(per_class):
            scope = (f"for (int i{v} = 0; i{v} < count{v}; i{v}++) "
                     f"{{ buf{v}[i{v}] = {marker}(buf{v}[i{v}]); }}")
            samples.append(CorpusSample(id=f"syn:{cidx}:{v}", language="c",
                                        scope=scope, pragma=pragma))
    return samples


SYNTHETIC_ORDER = 13  # context must span the marker call plus the prefix


_NAME_POOL = [
    "parallel", "for", "simd", "target", "teams", "single", "task",
    "sections", "critical", "private", "shared", "reduction", "schedule",
    "collapse", "nowait", "firstprivate", "lastprivate", "num_threads",
    "map", "device", "linear", "aligned", "mystery_clause", "vendor_hint",
]
_CONTROL_ATOMS = ["sum", "x", "i", "n", "static", "dynamic", "4", "64",
                  "a_b", "tmp2"]
_CONTROL_SEPS = [",", ":", "+:", "*:", "-"]


def random_ast_items(rng: random.Random) -> list[tuple[str, str | None]]:
    """(name, control) pairs with controls already in canonical form."""
    items = []
    for _ in range(rng.randrange(0, 6)):
        name = rng.choice(_NAME_POOL)
        control = None
        if rng.random() < 0.5:
            control = rng.choice(_CONTROL_ATOMS)
            for _ in range(rng.randrange(0, 3)):
                control += rng.choice(_CONTROL_SEPS) + rng.choice(_CONTROL_ATOMS)
            if rng.random() < 0.15:
                control = f"{rng.choice(_CONTROL_ATOMS)}({control})"
        items.append((name, control))
    return items
