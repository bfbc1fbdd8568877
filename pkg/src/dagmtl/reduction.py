"""Flow-based edge reduction and the comparison reducers.

All reducers work on the augmented weight matrix ``psi`` of shape
(N+2, N+2): row 0 holds read-in weights (virtual source), column N+1 holds
read-out weights (virtual sink) and ``psi[1:N+1, 1:N+1]`` is the edge gate
matrix, with hidden state s at index s.

Anchor window: ``lo = argmax(A)`` and ``hi = max(lo + 1, argmax(B))``
(0-based, clipped to N-1). Edges leaving states before ``lo`` and edges
entering states after ``hi`` are dropped, and read-in/read-out weights are
kept for states ``lo..hi`` inclusive.

A reduced graph counts as connected when it keeps the read-in link of the
first anchor state, the read-out link of the last one, and a path of DAG
edges between the two. That implies a source-to-sink path and rules out
sub-networks made of a bare read-in/read-out shortcut.

Ties between equal minimum scores are broken by the smallest (i, j) in
row-major order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .graphtop import RestrictedDag

FLOW = "flow"
RANDOM = "random"
THRESHOLD = "threshold"
REDUCERS = (FLOW, RANDOM, THRESHOLD)


@dataclass
class FlowMatrix:
    psi: np.ndarray
    anchor_in: int  # 1-based state of argmax(A)
    anchor_out: int  # 1-based last state of the window
    n_total_edges: int

    @property
    def n_states(self) -> int:
        return self.psi.shape[0] - 2

    def copy(self) -> "FlowMatrix":
        return FlowMatrix(self.psi.copy(), self.anchor_in, self.anchor_out, self.n_total_edges)


@dataclass
class ReductionTrace:
    removed: list[tuple[int, int, float]] = field(default_factory=list)
    stop_edge: tuple[int, int, float] | None = None
    termination: str = ""
    readin_mask: np.ndarray | None = None
    readout_mask: np.ndarray | None = None
    edge_matrix: np.ndarray | None = None
    active_counts: list[int] = field(default_factory=list)
    anchors: tuple[int, int] = (0, 0)
    n_total_edges: int = 0

    @property
    def hidden_sparsity(self) -> float:
        if self.n_total_edges == 0:
            return 0.0
        return float(self.edge_matrix.sum()) / self.n_total_edges

    def edge_mask(self, dag: RestrictedDag) -> np.ndarray:
        return np.array([self.edge_matrix[i - 1, j - 1] for i, j in dag.edges])

    def to_dict(self) -> dict:
        return {
            "removed": [{"edge": [i, j], "score": s} for i, j, s in self.removed],
            "stop_edge": None if self.stop_edge is None else
            {"edge": list(self.stop_edge[:2]), "score": self.stop_edge[2]},
            "termination": self.termination,
            "anchors": list(self.anchors),
            "n_total_edges": self.n_total_edges,
            "active_counts": self.active_counts,
            "readin_mask": self.readin_mask.astype(int).tolist(),
            "readout_mask": self.readout_mask.astype(int).tolist(),
            "edge_matrix": self.edge_matrix.astype(int).tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "ReductionTrace":
        return cls(
            removed=[(r["edge"][0], r["edge"][1], r["score"]) for r in d["removed"]],
            stop_edge=None if d["stop_edge"] is None else
            (d["stop_edge"]["edge"][0], d["stop_edge"]["edge"][1], d["stop_edge"]["score"]),
            termination=d["termination"],
            readin_mask=np.asarray(d["readin_mask"], dtype=float),
            readout_mask=np.asarray(d["readout_mask"], dtype=float),
            edge_matrix=np.asarray(d["edge_matrix"], dtype=float),
            active_counts=list(d["active_counts"]),
            anchors=tuple(d["anchors"]),
            n_total_edges=d["n_total_edges"],
        )


def edge_matrix(dag: RestrictedDag, values) -> np.ndarray:
    """Scatter per-edge ``values`` into an N x N upper-triangular matrix."""
    m = np.zeros((dag.n_states, dag.n_states))
    for (i, j), v in zip(dag.edges, values):
        m[i - 1, j - 1] = v
    return m


def build_flow_matrix(gamma, readin, readout, n_total_edges: int | None = None) -> FlowMatrix:
    gamma = np.asarray(gamma, dtype=float)
    a = np.asarray(readin, dtype=float)
    b = np.asarray(readout, dtype=float)
    n = a.shape[0]
    if n < 2:
        raise ValueError(f"flow matrix needs at least 2 states, got {n}")
    if gamma.shape != (n, n) or b.shape != (n,):
        raise ValueError(f"shape mismatch: gamma {gamma.shape}, A {a.shape}, B {b.shape}")
    if np.any(np.tril(gamma) != 0):
        raise ValueError("gamma must be strictly upper triangular")
    if min(gamma.min(), a.min(), b.min()) < 0:
        raise ValueError("gate values must be non-negative")
    if n_total_edges is None:
        n_total_edges = int(np.count_nonzero(gamma))
    lo = int(np.argmax(a))
    hi = min(max(lo + 1, int(np.argmax(b))), n - 1)
    g = gamma.copy()
    g[:lo, :] = 0
    g[:, hi + 1:] = 0
    psi = np.zeros((n + 2, n + 2))
    psi[1:n + 1, 1:n + 1] = g
    psi[0, lo + 1:hi + 2] = a[lo:hi + 1]
    psi[lo + 1:hi + 2, n + 1] = b[lo:hi + 1]
    return FlowMatrix(psi, lo + 1, hi + 1, n_total_edges)


def flow_scores(psi: np.ndarray) -> np.ndarray:
    """Information-flow score of every existing entry of ``psi`` (0 elsewhere).

    score(i, j) = psi_ij * (in_mass(i) / out_mass(i) / In(i)
                            + out_mass(j) / in_mass(j) / Out(j))

    where In/Out count nonzero entries. A term whose count is zero
    contributes 0.
    """
    present = psi > 0
    in_mass = psi.sum(axis=0)
    out_mass = psi.sum(axis=1)
    in_cnt = present.sum(axis=0)
    out_cnt = present.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        upstream = np.where((in_cnt > 0) & (out_mass > 0),
                            in_mass / np.where(out_mass > 0, out_mass, 1) / np.maximum(in_cnt, 1),
                            0.0)
        downstream = np.where((out_cnt > 0) & (in_mass > 0),
                              out_mass / np.where(in_mass > 0, in_mass, 1) / np.maximum(out_cnt, 1),
                              0.0)
    return np.where(present, psi * (upstream[:, None] + downstream[None, :]), 0.0)


def flow_score(fm: FlowMatrix | np.ndarray, i: int, j: int) -> float:
    psi = fm.psi if isinstance(fm, FlowMatrix) else fm
    return float(flow_scores(psi)[i, j])


def psi_reachable(psi: np.ndarray) -> bool:
    sink = psi.shape[0] - 1
    stack, seen = [0], {0}
    while stack:
        v = stack.pop()
        if v == sink:
            return True
        for w in np.flatnonzero(psi[v] > 0):
            w = int(w)
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return False


def anchored_reachable(psi: np.ndarray, anchor_in: int, anchor_out: int) -> bool:
    """Read-in into ``anchor_in``, read-out from ``anchor_out`` and a path of
    DAG edges from the first to the second (1-based states)."""
    sink = psi.shape[0] - 1
    if psi[0, anchor_in] <= 0 or psi[anchor_out, sink] <= 0:
        return False
    stack, seen = [anchor_in], {anchor_in}
    while stack:
        v = stack.pop()
        if v == anchor_out:
            return True
        for w in np.flatnonzero(psi[v, 1:sink] > 0):
            w = int(w) + 1
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return False


def _connected(psi: np.ndarray, fm: FlowMatrix) -> bool:
    return anchored_reachable(psi, fm.anchor_in, fm.anchor_out)


def _hidden_count(psi: np.ndarray) -> int:
    return int(np.count_nonzero(psi[1:-1, 1:-1]))


def _at_target(psi: np.ndarray, fm: FlowMatrix, target: float) -> bool:
    if fm.n_total_edges == 0:
        return True
    return _hidden_count(psi) / fm.n_total_edges <= target


def _finish(trace: ReductionTrace, psi: np.ndarray, fm: FlowMatrix) -> ReductionTrace:
    hat = (psi > 0).astype(float)
    n = fm.n_states
    trace.edge_matrix = hat[1:n + 1, 1:n + 1]
    trace.readin_mask = hat[0, 1:n + 1]
    trace.readout_mask = hat[1:n + 1, n + 1]
    trace.anchors = (fm.anchor_in, fm.anchor_out)
    trace.n_total_edges = fm.n_total_edges
    return trace


def _flow_reduce(fm: FlowMatrix, target: float | None) -> ReductionTrace:
    psi = fm.psi.copy()
    if not _connected(psi, fm):
        raise ValueError("flow-based reduction: input graph is not connected between anchors")
    trace = ReductionTrace()
    trace.active_counts.append(int(np.count_nonzero(psi)))
    snapshot = psi.copy()
    while True:
        if target is not None and _at_target(psi, fm, target):
            trace.termination = "sparsity"
            break
        scores = flow_scores(psi)
        candidates = np.where(psi > 0, scores, np.inf)
        flat = int(np.argmin(candidates))
        i, j = divmod(flat, psi.shape[1])
        score = float(scores[i, j])
        psi[i, j] = 0.0
        if _connected(psi, fm):
            trace.removed.append((i, j, score))
            trace.active_counts.append(int(np.count_nonzero(psi)))
            snapshot = psi.copy()
        else:
            trace.stop_edge = (i, j, score)
            trace.termination = "reachability"
            break
    return _finish(trace, snapshot, fm)


def flow_based_reduce(gamma, readin, readout, n_total_edges: int | None = None) -> ReductionTrace:
    """Remove the lowest-flow entry until the next removal would disconnect
    the anchors, then binarise what is left."""
    fm = gamma if isinstance(gamma, FlowMatrix) else \
        build_flow_matrix(gamma, readin, readout, n_total_edges)
    return _flow_reduce(fm, None)


def reduce_to_sparsity(gamma, readin, readout, target: float,
                       n_total_edges: int | None = None) -> ReductionTrace:
    """Flow-based reduction that also stops once edge sparsity <= ``target``."""
    if not 0 < target <= 1:
        raise ValueError(f"target sparsity must lie in (0, 1], got {target}")
    fm = gamma if isinstance(gamma, FlowMatrix) else \
        build_flow_matrix(gamma, readin, readout, n_total_edges)
    return _flow_reduce(fm, target)


def _ordered_reduce(fm: FlowMatrix, order: list[tuple[int, int]], target: float) -> ReductionTrace:
    psi = fm.psi.copy()
    if not _connected(psi, fm):
        raise ValueError("reduction: input graph is not connected between anchors")
    trace = ReductionTrace()
    trace.active_counts.append(int(np.count_nonzero(psi)))
    trace.termination = "reachability_limit"
    for i, j in order:
        if _at_target(psi, fm, target):
            trace.termination = "sparsity"
            break
        value = float(psi[i, j])
        psi[i, j] = 0.0
        if _connected(psi, fm):
            trace.removed.append((i, j, value))
            trace.active_counts.append(int(np.count_nonzero(psi)))
        else:
            psi[i, j] = value
    else:
        if _at_target(psi, fm, target):
            trace.termination = "sparsity"
    return _finish(trace, psi, fm)


def _hidden_entries(psi: np.ndarray) -> list[tuple[int, int]]:
    n = psi.shape[0] - 2
    return [(int(i), int(j)) for i, j in zip(*np.nonzero(psi[1:n + 1, 1:n + 1] > 0))
            for i, j in [(i + 1, j + 1)]]


def random_reduce(gamma, readin, readout, target: float, seed: int,
                  n_total_edges: int | None = None) -> ReductionTrace:
    """Remove DAG edges in a seeded random order, skipping any removal that
    would disconnect the graph, until edge sparsity <= ``target``."""
    fm = gamma if isinstance(gamma, FlowMatrix) else \
        build_flow_matrix(gamma, readin, readout, n_total_edges)
    entries = _hidden_entries(fm.psi)
    perm = np.random.default_rng(seed).permutation(len(entries))
    return _ordered_reduce(fm, [entries[k] for k in perm], target)


def threshold_reduce(gamma, readin, readout, target: float,
                     n_total_edges: int | None = None) -> ReductionTrace:
    """Remove DAG edges in ascending gate value (ties by (i, j))."""
    fm = gamma if isinstance(gamma, FlowMatrix) else \
        build_flow_matrix(gamma, readin, readout, n_total_edges)
    entries = _hidden_entries(fm.psi)
    order = sorted(entries, key=lambda e: (fm.psi[e], e))
    return _ordered_reduce(fm, order, target)


def reduce(kind: str, gamma, readin, readout, target: float | None = None, seed: int = 0,
           n_total_edges: int | None = None) -> ReductionTrace:
    """Dispatch by reducer name. ``target=None`` means the unrestricted
    flow-based reduction; the other reducers need a target."""
    if kind == FLOW:
        if target is None:
            return flow_based_reduce(gamma, readin, readout, n_total_edges)
        return reduce_to_sparsity(gamma, readin, readout, target, n_total_edges)
    if target is None:
        raise ValueError(f"reducer {kind!r} needs a target sparsity")
    if kind == RANDOM:
        return random_reduce(gamma, readin, readout, target, seed, n_total_edges)
    if kind == THRESHOLD:
        return threshold_reduce(gamma, readin, readout, target, n_total_edges)
    raise ValueError(f"unknown reducer {kind!r}")
