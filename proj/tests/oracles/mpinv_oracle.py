"""Freezes minimum-norm least-squares starting points for the selection tests.

For each random instance the expected real solution is numpy's pseudoinverse
applied to y, and the expected binary start sets the largest L_sel entries to
one. Instances whose L_sel-th and (L_sel+1)-th entries are closer than GAP are
redrawn so the expected vector does not hinge on rounding.

    python3 tests/oracles/mpinv_oracle.py > tests/data/mpinv_oracle.json
"""

import json
import sys

import numpy as np

GAP = 1e-6
SHAPES = [(10, 20, 5), (62, 33, 8), (5, 12, 3), (20, 8, 2), (4, 4, 2)]


def instance(rng, classes, candidates, cardinality, rank_deficient):
    n = 32
    counts = np.zeros((classes, candidates), dtype=np.int64)
    for j in range(candidates):
        p = rng.dirichlet(np.full(classes, 0.3))
        counts[:, j] = rng.multinomial(n, p)
    if rank_deficient and candidates >= 2:
        counts[:, candidates - 1] = counts[:, 0]
    p_real = rng.dirichlet(np.full(classes, 5.0))
    presampled = rng.multinomial(2 * n, p_real)
    scale = n * (cardinality + 2)
    y = scale * p_real - presampled
    return counts, y, float(scale)


def main():
    rng = np.random.default_rng(20240611)
    cases = []
    while len(cases) < 50:
        classes, candidates, cardinality = SHAPES[len(cases) % len(SHAPES)]
        deficient = len(cases) % 7 == 3
        counts, y, scale = instance(rng, classes, candidates, cardinality, deficient)
        x = np.linalg.pinv(counts.astype(float), rcond=1e-10) @ y
        order = sorted(range(candidates), key=lambda i: (-x[i], i))
        kth, nxt = x[order[cardinality - 1]], x[order[cardinality]]
        if abs(kth - nxt) < GAP * max(1.0, abs(kth)):
            continue
        binary = [0] * candidates
        for i in order[:cardinality]:
            binary[i] = 1
        cases.append({
            "instance": {
                "F": classes,
                "alpha": candidates,
                "L_sel": cardinality,
                "A": counts.reshape(-1).tolist(),
                "y": y.tolist(),
                "scale": scale,
            },
            "min_norm": x.tolist(),
            "start": binary,
        })
    json.dump({"tolerance": 1e-8, "cases": cases}, sys.stdout, indent=1)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
