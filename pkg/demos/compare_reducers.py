#!/usr/bin/env python3
"""Flow-based, random and threshold reduction on the same gate values.

No training happens here: gate values are drawn at random on an N=8, M=5
graph, with a strong read-in at v_1 and a strong read-out at v_8. Each
reducer removes entries until the edge sparsity target is met, and the
table shows what survives. ``dagmtl compare-reducers`` runs the same
comparison with fine-tuning.
"""

import numpy as np

from dagmtl.graphtop import build_restricted_dag, depth, width
from dagmtl.reduction import REDUCERS, edge_matrix, reduce


def main():
    rng = np.random.default_rng(7)
    dag = build_restricted_dag(8, 5)
    gamma = edge_matrix(dag, 1 / (1 + np.exp(-rng.normal(scale=2, size=dag.n_edges))))
    a = np.full(8, 0.1)
    a[0] = 0.9
    b = np.full(8, 0.1)
    b[-1] = 0.9

    print(f"{'tau':>5} {'reducer':<10}{'kept':>5}{'D':>4}{'W':>4}  gate mass kept  stop")
    for tau in (0.8, 0.5, 0.3, 0.2):
        for kind in REDUCERS:
            t = reduce(kind, gamma, a, b, target=tau, seed=0)
            edges = [(i + 1, j + 1) for i, j in zip(*np.nonzero(t.edge_matrix))]
            mass = float((gamma * t.edge_matrix).sum())
            print(f"{tau:>5.1f} {kind:<10}{len(edges):>5}{depth(edges):>4}{width(edges):>4}"
                  f"  {mass:>14.2f}  {t.termination}")
        print()


if __name__ == "__main__":
    main()
