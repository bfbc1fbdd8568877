"""Gated forward pass of the shared central network.

Each task owns a :class:`GateSet` that decides how much of every read-in
link, DAG edge and read-out link it uses. The network weights (edge
operators, read-in/read-out projections) are shared; only the heads are
per task.

Normalisation follows one convention, kept in :func:`in_count`: the
read-in message counts as one incoming slot of every state. During search
the count covers every DAG in-edge, so it does not depend on the gates;
after discretisation it covers active contributions only.
"""

from __future__ import annotations

import json
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .graphtop import RestrictedDag, SubGraph
from .numcore import Variable

CHECKPOINT_FORMAT = "dagmtl-checkpoint"
CHECKPOINT_VERSION = 1


class Mode(str, Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


class GateSet:
    """Upper-level parameters of one task, plus their binarised masks."""

    def __init__(self, n_states: int, n_edges: int, task: int = 0):
        self.task = task
        self.alpha = Variable(np.zeros(n_states), trainable=True, tag=f"alpha{task}")
        self.beta = Variable(np.zeros(n_states), trainable=True, tag=f"beta{task}")
        self.gamma = Variable(np.zeros(n_edges), trainable=True, tag=f"gamma{task}")
        self.mode = Mode.CONTINUOUS
        self.readin_mask: np.ndarray | None = None
        self.readout_mask: np.ndarray | None = None
        self.edge_mask: np.ndarray | None = None

    @property
    def n_states(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_edges(self) -> int:
        return self.gamma.shape[0]

    def variables(self) -> list[Variable]:
        return [self.alpha, self.beta, self.gamma]

    def set_discrete(self, readin_mask, readout_mask, edge_mask) -> None:
        masks = [np.asarray(m, dtype=float) for m in (readin_mask, readout_mask, edge_mask)]
        shapes = [(self.n_states,), (self.n_states,), (self.n_edges,)]
        for m, shape in zip(masks, shapes):
            if m.shape != shape:
                raise ValueError(f"mask shape {m.shape} != {shape}")
            if not np.all((m == 0) | (m == 1)):
                raise ValueError("masks must be binary")
        self.readin_mask, self.readout_mask, self.edge_mask = masks
        self.mode = Mode.DISCRETE

    def subgraph(self, dag: RestrictedDag) -> SubGraph:
        if self.mode is not Mode.DISCRETE:
            raise ValueError("subgraph requires a discrete gate set")
        return SubGraph(
            dag,
            frozenset(e for e, m in zip(dag.edges, self.edge_mask) if m),
            frozenset(i + 1 for i, m in enumerate(self.readin_mask) if m),
            frozenset(i + 1 for i, m in enumerate(self.readout_mask) if m),
        )

    def copy(self) -> "GateSet":
        out = GateSet(self.n_states, self.n_edges, self.task)
        for src, dst in zip(self.variables(), out.variables()):
            dst.value = src.value.copy()
        if self.mode is Mode.DISCRETE:
            out.set_discrete(self.readin_mask, self.readout_mask, self.edge_mask)
        return out

    def to_dict(self) -> dict:
        d = {"task": self.task, "mode": self.mode.value,
             "alpha": self.alpha.value.tolist(), "beta": self.beta.value.tolist(),
             "gamma": self.gamma.value.tolist()}
        if self.mode is Mode.DISCRETE:
            d["readin_mask"] = self.readin_mask.astype(int).tolist()
            d["readout_mask"] = self.readout_mask.astype(int).tolist()
            d["edge_mask"] = self.edge_mask.astype(int).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GateSet":
        g = cls(len(d["alpha"]), len(d["gamma"]), d["task"])
        g.alpha.value = np.asarray(d["alpha"], dtype=float)
        g.beta.value = np.asarray(d["beta"], dtype=float)
        g.gamma.value = np.asarray(d["gamma"], dtype=float)
        if d["mode"] == Mode.DISCRETE.value:
            g.set_discrete(d["readin_mask"], d["readout_mask"], d["edge_mask"])
        return g


def chain_gates(dag: RestrictedDag, task: int = 0) -> GateSet:
    """Discrete gates selecting the plain chain v_1 -> ... -> v_N."""
    g = GateSet(dag.n_states, dag.n_edges, task)
    readin = np.zeros(dag.n_states)
    readin[0] = 1
    readout = np.zeros(dag.n_states)
    readout[-1] = 1
    edges = np.array([1.0 if j == i + 1 else 0.0 for i, j in dag.edges])
    g.set_discrete(readin, readout, edges)
    return g


class _Affine:
    __slots__ = ("w", "b")

    def __init__(self, w: Variable, b: Variable):
        self.w, self.b = w, b

    def __call__(self, x: Variable) -> Variable:
        return nc.affine(x, self.w, self.b)

    @property
    def n_params(self) -> int:
        return self.w.value.size + self.b.value.size


class CentralNet:
    """Shared weights: one affine+ReLU operator per DAG edge, per-state
    read-in and read-out projections, and one affine head per task."""

    def __init__(self, dag: RestrictedDag, input_dim: int, head_dims: Sequence[int],
                 state_dim: int = 16, readout_dim: int | None = None, seed: int = 0):
        self.dag = dag
        self.input_dim = input_dim
        self.state_dim = state_dim
        self.readout_dim = readout_dim or state_dim
        self.head_dims = list(head_dims)
        self.seed = seed
        rng = np.random.default_rng(seed)

        def layer(fan_in, fan_out, tag):
            return _Affine(Variable(nc.glorot_uniform(rng, fan_in, fan_out), True, tag + ".w"),
                           Variable(np.zeros(fan_out), True, tag + ".b"))

        d = state_dim
        self.edges = [layer(d, d, f"theta{i}_{j}") for i, j in dag.edges]
        self.readin = [layer(input_dim, d, f"readin{s}") for s in range(1, dag.n_states + 1)]
        self.readout = [layer(d, self.readout_dim, f"readout{s}")
                        for s in range(1, dag.n_states + 1)]
        self.heads = [layer(self.readout_dim, h, f"head{k}") for k, h in enumerate(head_dims)]
        self._in_edges = [dag.in_edges(j) for j in range(1, dag.n_states + 1)]

    @property
    def n_tasks(self) -> int:
        return len(self.heads)

    def layers(self) -> list[_Affine]:
        return self.edges + self.readin + self.readout + self.heads

    def weight_variables(self) -> list[Variable]:
        return [v for layer in self.layers() for v in (layer.w, layer.b)]

    def new_gates(self) -> list[GateSet]:
        return [GateSet(self.dag.n_states, self.dag.n_edges, k) for k in range(self.n_tasks)]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {v.tag: v.value.copy() for v in self.weight_variables()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for v in self.weight_variables():
            v.value = snap[v.tag].copy()
            v.zero_grad()

    def n_search_parameters(self) -> int:
        """Every weight of the search space, heads included."""
        return sum(layer.n_params for layer in self.layers())


# -------------------------------------------------------------- forward pass

def in_count(dag: RestrictedDag, gates: GateSet, state: int) -> int:
    """Normaliser of the gated average into 1-based ``state``."""
    in_edges = dag.in_edges(state)
    if gates.mode is Mode.CONTINUOUS:
        return 1 + len(in_edges)
    return int(gates.readin_mask[state - 1] + sum(gates.edge_mask[k] for k in in_edges))


def gate_values(gates: GateSet) -> tuple[Variable, Variable, Variable]:
    """(read-in, edge, read-out) gate vectors for the current mode."""
    if gates.mode is Mode.CONTINUOUS:
        return nc.sigmoid(gates.alpha), nc.sigmoid(gates.gamma), nc.sigmoid(gates.beta)
    return (Variable(gates.readin_mask), Variable(gates.edge_mask),
            Variable(gates.readout_mask))


def _as_input(x) -> Variable:
    return x if isinstance(x, Variable) else Variable(np.atleast_2d(x))


def read_in(net: CentralNet, gates: GateSet, x, g_in: Variable | None = None) -> list[Variable]:
    x = _as_input(x)
    if x.value.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"read_in: input shape {x.shape} does not match input dim {net.input_dim}")
    if g_in is None:
        g_in = gate_values(gates)[0]
    reads = []
    for i, proj in enumerate(net.readin):
        if gates.mode is Mode.DISCRETE and not gates.readin_mask[i]:
            reads.append(Variable(np.zeros((x.shape[0], net.state_dim))))
        else:
            reads.append(nc.gated_sum([proj(x)], g_in, [i]))
    return reads


def forward_states(net: CentralNet, gates: GateSet, reads: Sequence[Variable],
                   g_edge: Variable | None = None) -> list[Variable]:
    dag = net.dag
    if g_edge is None:
        g_edge = gate_values(gates)[1]
    discrete = gates.mode is Mode.DISCRETE
    states: list[Variable] = []
    for j in range(1, dag.n_states + 1):
        in_edges = net._in_edges[j - 1]
        if discrete:
            in_edges = [k for k in in_edges if gates.edge_mask[k]]
        n_in = in_count(dag, gates, j)
        if n_in == 0:
            if discrete and gates.readout_mask[j - 1]:
                raise ValueError(f"state v{j} is read out but has no active input")
            states.append(Variable(np.zeros_like(reads[j - 1].value)))
            continue
        scale = 1.0 / n_in
        r = nc.scalar_mul(reads[j - 1], scale)
        if not in_edges:
            states.append(r)
            continue
        msgs = [nc.relu(net.edges[k](states[dag.edges[k][0] - 1])) for k in in_edges]
        states.append(nc.add(r, nc.gated_sum(msgs, g_edge, in_edges, scale)))
    return states


def read_out(net: CentralNet, gates: GateSet, states: Sequence[Variable],
             g_out: Variable | None = None) -> Variable:
    if g_out is None:
        g_out = gate_values(gates)[2]
    idx = list(range(net.dag.n_states))
    if gates.mode is Mode.DISCRETE:
        idx = [i for i in idx if gates.readout_mask[i]]
        if not idx:
            raise ValueError("read_out: no active read-out state")
    return nc.gated_sum([net.readout[i](states[i]) for i in idx], g_out, idx)


def predict(net: CentralNet, gates: GateSet, task: int, x) -> Variable:
    g_in, g_edge, g_out = gate_values(gates)
    reads = read_in(net, gates, x, g_in)
    states = forward_states(net, gates, reads, g_edge)
    return net.heads[task](read_out(net, gates, states, g_out))


# -------------------------------------------------------- parameter accounting

def backbone_reference(net: CentralNet) -> int:
    """Weights of one plain chain backbone: read-in to v_1, the N-1 chain
    edges, read-out from v_N. This is the shared-bottom unit cost."""
    chain = sum(net.edges[k].n_params for k, (i, j) in enumerate(net.dag.edges) if j == i + 1)
    return net.readin[0].n_params + chain + net.readout[-1].n_params


def backbone_parameters(net: CentralNet, all_gates: Sequence[GateSet]) -> int:
    for g in all_gates:
        if g.mode is not Mode.DISCRETE:
            raise ValueError("count_parameters needs discrete gate sets")
    edges = set().union(*(np.flatnonzero(g.edge_mask) for g in all_gates))
    readin = set().union(*(np.flatnonzero(g.readin_mask) for g in all_gates))
    readout = set().union(*(np.flatnonzero(g.readout_mask) for g in all_gates))
    return (sum(net.edges[k].n_params for k in edges)
            + sum(net.readin[s].n_params for s in readin)
            + sum(net.readout[s].n_params for s in readout))


def count_parameters(net: CentralNet, all_gates: Sequence[GateSet]) -> tuple[float, int]:
    """(ratio, raw) for a discretised multi-task network.

    ``raw`` counts the union of weights any task touches plus all heads.
    ``ratio`` compares backbone weights only against
    :func:`backbone_reference`, so that a shared chain is exactly 1.
    """
    backbone = backbone_parameters(net, all_gates)
    heads = sum(h.n_params for h in net.heads)
    return backbone / backbone_reference(net), backbone + heads


def search_space_ratio(net: CentralNet) -> float:
    """Backbone weights of the whole search space relative to one chain."""
    total = sum(layer.n_params for layer in net.edges + net.readin + net.readout)
    return total / backbone_reference(net)


# ---------------------------------------------------------------- checkpoints

def checkpoint_dict(net: CentralNet, all_gates: Sequence[GateSet], meta: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "n_states": net.dag.n_states,
        "flow_constant": net.dag.flow_constant,
        "input_dim": net.input_dim,
        "state_dim": net.state_dim,
        "readout_dim": net.readout_dim,
        "head_dims": net.head_dims,
        "seed": net.seed,
        "weights": {tag: {"shape": list(a.shape), "data": a.reshape(-1).tolist()}
                    for tag, a in net.snapshot().items()},
        "gates": [g.to_dict() for g in all_gates],
        "meta": meta or {},
    }


def save_checkpoint(path, net: CentralNet, all_gates: Sequence[GateSet],
                    meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(net, all_gates, meta), indent=1))


def load_checkpoint(path) -> tuple[CentralNet, list[GateSet], dict]:
    from .graphtop import build_restricted_dag

    d = json.loads(Path(path).read_text())
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {d.get('version')}")
    dag = build_restricted_dag(d["n_states"], d["flow_constant"])
    net = CentralNet(dag, d["input_dim"], d["head_dims"], d["state_dim"],
                     d["readout_dim"], d["seed"])
    net.restore({tag: np.asarray(w["data"], dtype=float).reshape(w["shape"])
                 for tag, w in d["weights"].items()})
    return net, [GateSet.from_dict(g) for g in d["gates"]], d["meta"]
