#!/usr/bin/env python3
"""Audit the flow-restricted search graph.

Prints, for every N up to --max-states and every flow constant M:

  - the edge count next to the closed form M*N - M(M+1)/2
  - the exhaustive min depth / max width over sub-graphs linking v_1 to v_N
  - the two closed-form depth guesses, ceil(N/M) and ceil((N-1)/M)

Try::

    python3 demos/topology_audit.py --max-states 7
"""

import argparse

from dagmtl.graphtop import (build_restricted_dag, enumerate_subgraph_extrema,
                             min_depth_references)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--max-states", type=int, default=8)
    args = p.parse_args()

    print(f"{'N':>3}{'M':>3}{'|E|':>5}{'formula':>9}{'min D':>7}{'max W':>7}"
          f"{'ceil(N/M)':>11}{'ceil((N-1)/M)':>15}")
    off = 0
    for n in range(2, args.max_states + 1):
        for m in range(1, n):
            dag = build_restricted_dag(n, m)
            d, w = enumerate_subgraph_extrema(n, m)
            refs = min_depth_references(n, m)
            mark = "" if d == refs["ceil_N_over_M"] else "  *"
            off += bool(mark)
            print(f"{n:>3}{m:>3}{dag.n_edges:>5}{m * n - m * (m + 1) // 2:>9}{d:>7}{w:>7}"
                  f"{refs['ceil_N_over_M']:>11}{refs['ceil_Nminus1_over_M']:>15}{mark}")
    print(f"\n* min depth differs from ceil(N/M) in {off} cells; "
          f"a path from v_1 to v_N spans N-1 steps of at most M states each, "
          f"so ceil((N-1)/M) is the tight value.")


if __name__ == "__main__":
    main()
