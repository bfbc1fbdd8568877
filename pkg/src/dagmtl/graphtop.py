"""Flow-restricted DAGs and their topology measures.

Hidden states are numbered 1..N. Index 0 is the input state (virtual
source, reached through read-in links) and N+1 is the read-out aggregate
(virtual sink).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

Edge = tuple[int, int]

SOURCE = 0


@dataclass(frozen=True)
class RestrictedDag:
    n_states: int
    flow_constant: int
    edges: tuple[Edge, ...]

    def __post_init__(self):
        if list(self.edges) != sorted(set(self.edges)):
            raise ValueError("edges must be sorted and duplicate-free")
        for i, j in self.edges:
            if not 1 <= i < j <= self.n_states:
                raise ValueError(f"edge {(i, j)} violates topological order")
            if j - i > self.flow_constant:
                raise ValueError(f"edge {(i, j)} exceeds flow constant {self.flow_constant}")

    @property
    def sink(self) -> int:
        return self.n_states + 1

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_index(self) -> dict[Edge, int]:
        return {e: k for k, e in enumerate(self.edges)}

    def in_edges(self, j: int) -> list[int]:
        """Positions (in ``edges``) of edges ending at state ``j``."""
        return [k for k, (_, t) in enumerate(self.edges) if t == j]

    def full(self) -> "SubGraph":
        states = frozenset(range(1, self.n_states + 1))
        return SubGraph(self, frozenset(self.edges), states, states)


@dataclass(frozen=True)
class SubGraph:
    parent: RestrictedDag
    active_edges: frozenset[Edge]
    active_readin: frozenset[int] = field(default_factory=frozenset)
    active_readout: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        extra = set(self.active_edges) - set(self.parent.edges)
        if extra:
            raise ValueError(f"edges {sorted(extra)} are not in the parent DAG")

    def sorted_edges(self) -> list[Edge]:
        return sorted(self.active_edges)


@dataclass(frozen=True)
class TopologyReport:
    depth: int
    width: int
    sparsity: float

    def as_dict(self) -> dict:
        return {"D": self.depth, "W": self.width, "S": self.sparsity}


def n_restricted_edges(n_states: int, flow_constant: int) -> int:
    return flow_constant * n_states - flow_constant * (flow_constant + 1) // 2


def build_restricted_dag(n_states: int, flow_constant: int) -> RestrictedDag:
    if n_states < 2:
        raise ValueError(f"n_states must be >= 2, got {n_states}")
    if not 1 <= flow_constant <= n_states - 1:
        raise ValueError(
            f"flow_constant must lie in [1, {n_states - 1}], got {flow_constant}")
    edges = tuple((i, j) for i in range(1, n_states + 1)
                  for j in range(i + 1, min(i + flow_constant, n_states) + 1))
    return RestrictedDag(n_states, flow_constant, edges)


def _as_edges(g: SubGraph | Iterable[Edge]) -> list[Edge]:
    if isinstance(g, SubGraph):
        return sorted(g.active_edges)
    return sorted(set(g))


def depth(g: SubGraph | Iterable[Edge]) -> int:
    """Longest path, in edges, between any two connected states."""
    edges = _as_edges(g)
    if not edges:
        raise ValueError("depth: graph has no edges")
    preds: dict[int, list[int]] = {}
    nodes = sorted({v for e in edges for v in e})
    for i, j in edges:
        preds.setdefault(j, []).append(i)
    # states are numbered in topological order
    longest = {v: 0 for v in nodes}
    for v in nodes:
        for u in preds.get(v, ()):
            longest[v] = max(longest[v], longest[u] + 1)
    return max(longest.values())


def width(g: SubGraph | Iterable[Edge]) -> int:
    """Maximum out-degree over states."""
    edges = _as_edges(g)
    if not edges:
        raise ValueError("width: graph has no edges")
    out: dict[int, int] = {}
    for i, _ in edges:
        out[i] = out.get(i, 0) + 1
    return max(out.values())


def sparsity(g: SubGraph) -> float:
    if not g.parent.edges:
        raise ValueError("sparsity: parent DAG has no edges")
    return len(g.active_edges) / len(g.parent.edges)


def topology(g: SubGraph) -> TopologyReport:
    return TopologyReport(depth(g), width(g), sparsity(g))


def augmented_adjacency(g: SubGraph) -> dict[int, list[int]]:
    """Successor lists including the virtual source and sink."""
    sink = g.parent.sink
    succ: dict[int, list[int]] = {v: [] for v in range(sink + 1)}
    succ[SOURCE] = sorted(g.active_readin)
    for i, j in sorted(g.active_edges):
        succ[i].append(j)
    for i in sorted(g.active_readout):
        succ[i].append(sink)
    return succ


def reachable(g: SubGraph, source: int = SOURCE, sink: int | None = None) -> bool:
    """Depth-first search for a directed path ``source`` -> ``sink``.

    ``source`` defaults to the virtual input state and ``sink`` to the
    virtual read-out aggregate.
    """
    if sink is None:
        sink = g.parent.sink
    succ = augmented_adjacency(g)
    stack, seen = [source], {source}
    while stack:
        v = stack.pop()
        if v == sink:
            return True
        for w in succ[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return False


def useful_part(g: SubGraph) -> SubGraph:
    """Drop every edge and read-in/out link not on a source-to-sink path."""
    succ = augmented_adjacency(g)
    pred: dict[int, list[int]] = {v: [] for v in succ}
    for v, ws in succ.items():
        for w in ws:
            pred[w].append(v)

    def closure(start, nbrs):
        seen, stack = {start}, [start]
        while stack:
            v = stack.pop()
            for w in nbrs[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return seen

    fwd = closure(SOURCE, succ)
    bwd = closure(g.parent.sink, pred)
    live = fwd & bwd
    return SubGraph(
        g.parent,
        frozenset(e for e in g.active_edges if e[0] in live and e[1] in live),
        frozenset(s for s in g.active_readin if s in live),
        frozenset(s for s in g.active_readout if s in live),
    )


def enumerate_subgraph_extrema(n_states: int, flow_constant: int,
                               max_subset_edges: int = 22) -> tuple[int, int]:
    """Exhaustive (min depth, max width) over sub-graphs linking v_1 to v_N.

    Only the restricted DAG is considered; read-in/read-out links are left
    out. When the DAG has at most ``max_subset_edges`` edges every edge
    subset is checked. Larger DAGs fall back to an exact enumeration of the
    extremal sub-graphs: each connecting sub-graph contains a v_1 -> v_N
    path that is no deeper than it, and is contained in the full DAG, which
    is at least as wide.
    """
    if n_states > 12:
        raise ValueError(f"enumeration is exponential; n_states={n_states} > 12")
    dag = build_restricted_dag(n_states, flow_constant)
    if dag.n_edges <= max_subset_edges:
        return _subset_extrema(dag)
    return _path_extrema(dag)


def _subset_extrema(dag: RestrictedDag, chunk: int = 1 << 20) -> tuple[int, int]:
    n, edges = dag.n_states, dag.edges
    n_edges = len(edges)
    by_target = sorted(range(n_edges), key=lambda k: (edges[k][1], edges[k][0]))
    min_depth, max_width = np.iinfo(np.int64).max, 0
    for lo in range(1, 1 << n_edges, chunk):
        masks = np.arange(lo, min(lo + chunk, 1 << n_edges), dtype=np.int64)
        bits = [(masks >> k) & 1 for k in range(n_edges)]
        # reach[v]: bitset of states reachable from v
        reach = [None] * (n + 1)
        for v in range(n, 0, -1):
            r = np.zeros_like(masks)
            for k, (i, j) in enumerate(edges):
                if i == v:
                    r |= bits[k] * ((1 << j) | (reach[j] if reach[j] is not None else 0))
            reach[v] = r
        connects = ((reach[1] >> n) & 1).astype(bool)
        if not connects.any():
            continue
        out = np.zeros((n + 1, masks.size), dtype=np.int64)
        for k, (i, _) in enumerate(edges):
            out[i] += bits[k]
        longest = np.zeros((n + 1, masks.size), dtype=np.int64)
        for k in by_target:
            i, j = edges[k]
            np.maximum(longest[j], bits[k] * (longest[i] + 1), out=longest[j])
        max_width = max(max_width, int(out.max(axis=0)[connects].max()))
        min_depth = min(min_depth, int(longest.max(axis=0)[connects].min()))
    return int(min_depth), max_width


def _path_extrema(dag: RestrictedDag) -> tuple[int, int]:
    n, m = dag.n_states, dag.flow_constant
    shortest = None
    stack = [(1, 0)]
    while stack:
        v, hops = stack.pop()
        if v == n:
            shortest = hops if shortest is None else min(shortest, hops)
            continue
        for w in range(v + 1, min(v + m, n) + 1):
            stack.append((w, hops + 1))
    return shortest, width(dag.full())


def min_depth_references(n_states: int, flow_constant: int) -> dict[str, int]:
    """The two closed forms the enumeration is audited against."""
    return {
        "ceil_N_over_M": math.ceil(n_states / flow_constant),
        "ceil_Nminus1_over_M": math.ceil((n_states - 1) / flow_constant),
    }


def export_dot(g: SubGraph, task_label: str) -> str:
    """Graphviz digraph of a sub-network, with read-in/out as source/sink."""
    n = g.parent.n_states
    name = "".join(c if c.isalnum() else "_" for c in task_label) or "task"
    lines = [f"digraph {name} {{", "  rankdir=LR;",
             f'  label="{task_label}";',
             '  input [shape=box, label="v0 (input)"];',
             '  output [shape=box, label="vL (read-out)"];']
    for s in range(1, n + 1):
        lines.append(f"  v{s};")
    for s in sorted(g.active_readin):
        lines.append(f"  input -> v{s} [style=dashed];")
    for i, j in sorted(g.active_edges):
        lines.append(f"  v{i} -> v{j};")
    for s in sorted(g.active_readout):
        lines.append(f"  v{s} -> output [style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def all_pairs(n_states: int) -> list[Edge]:
    return list(itertools.combinations(range(1, n_states + 1), 2))
