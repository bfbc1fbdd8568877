"""Three-stage training: warm-up, search, reduction, rewind and fine-tune."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import numcore as nc
from . import objectives as obj
from .centralnet import (CentralNet, GateSet, Mode, checkpoint_dict, count_parameters, predict,
                         search_space_ratio)
from .evalbench import (BaselineResult, SyntheticMtlDataset, evaluate, relative_performance,
                        run_baselines, topology_report)
from .graphtop import RestrictedDag, build_restricted_dag, export_dot, useful_part
from .reduction import FLOW, ReductionTrace, edge_matrix, reduce

WARMUP, SEARCH, FINETUNE = "warmup", "search", "finetune"


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class TrainPlan:
    warmup_iters: int = 500
    search_iters: int = 1500
    finetune_iters: int = 2000
    weight_lr: float = 1e-4
    upper_lr: float = 1e-2
    lambda_sq: float = 0.05
    kappa: float | None = None
    batch_size: int = 32
    seed: int = 0
    flow_constant: int = 3
    n_states: int = 8
    state_dim: int = 16
    log_every: int = 50

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("warmup_iters", "search_iters", "finetune_iters", "batch_size",
                     "n_states", "state_dim", "log_every"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("weight_lr", "upper_lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.lambda_sq < 0:
            raise ValueError("lambda_sq must be >= 0")
        if self.kappa is not None and self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if not 1 <= self.flow_constant <= self.n_states - 1:
            raise ValueError(f"flow_constant must lie in [1, {self.n_states - 1}]")

    def budget(self, n_edges: int) -> float:
        return obj.default_budget(n_edges) if self.kappa is None else float(self.kappa)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class StageCheckpoint:
    stage: str
    weights: dict[str, np.ndarray]
    gates: list[dict]
    iteration: int
    metrics: dict = field(default_factory=dict)

    def gate_sets(self) -> list[GateSet]:
        return [GateSet.from_dict(g) for g in self.gates]

    def to_dict(self) -> dict:
        return {"stage": self.stage, "iteration": self.iteration, "metrics": self.metrics,
                "gates": self.gates,
                "weights": {k: v.tolist() for k, v in sorted(self.weights.items())}}


def _checkpoint(stage, net, gates, iteration, metrics=None) -> StageCheckpoint:
    return StageCheckpoint(stage, net.snapshot(), [g.to_dict() for g in gates], iteration,
                           metrics or {})


Callback = Callable[[str, int, CentralNet, Sequence[GateSet]], None]


def _batches(data: SyntheticMtlDataset, tasks, batch_size, rng):
    n = data.x_train.shape[0]
    xs, ys = [], []
    for k in tasks:
        idx = rng.integers(0, n, size=batch_size)
        xs.append(data.x_train[idx])
        ys.append(data.y_train[k][idx])
    return xs, ys


def _run_loop(stage: str, net: CentralNet, gates: Sequence[GateSet], data: SyntheticMtlDataset,
              plan: TrainPlan, iters: int, optimizers: Sequence[nc.Adam], rng,
              tasks: Sequence[int] | None = None, lambda_sq: float = 0.0,
              budget: float = 0.0, log: list | None = None,
              callback: Callback | None = None) -> float:
    tasks = list(range(data.n_tasks)) if tasks is None else list(tasks)
    specs = [data.specs[k] for k in tasks]
    use_squeeze = stage == SEARCH
    first = None
    for it in range(iters):
        if callback is not None:
            callback(stage, it, net, gates)
        xs, ys = _batches(data, tasks, plan.batch_size, rng)
        try:
            preds = [predict(net, gates[h], h, xs[h]) for h in range(len(tasks))]
            losses = obj.task_losses(preds, ys, specs)
            lt = nc.add_n(losses)
            if use_squeeze:
                sq = obj.squeeze_loss(gates, budget)
                total = obj.train_loss(lt, sq, lambda_sq)
            else:
                sq, total = None, lt
        except FloatingPointError as exc:
            raise StageError(stage, f"non-finite value at iteration {it}: {exc}") from exc
        if not np.isfinite(total.item()):
            raise StageError(stage, f"loss is not finite at iteration {it}")
        if first is None:
            first = lt.item()
        for opt in optimizers:
            opt.zero_grad()
        nc.backward(total)
        for opt in optimizers:
            opt.step()
        if log is not None and (it % plan.log_every == 0 or it == iters - 1):
            row = obj.LossBreakdown([l.item() for l in losses], lt.item(),
                                    sq.item() if sq is not None else 0.0, total.item(),
                                    lambda_sq if use_squeeze else 0.0, budget).row()
            log.append({"stage": stage, "iteration": it, **row})
    return first


def warmup_stage(net: CentralNet, gates: Sequence[GateSet], data: SyntheticMtlDataset,
                 plan: TrainPlan, log: list | None = None,
                 callback: Callback | None = None) -> StageCheckpoint:
    """Train the shared weights with every gate logit frozen at 0."""
    for g in gates:
        if g.mode is not Mode.CONTINUOUS:
            raise StageError(WARMUP, "warm-up expects continuous gates")
        for v in g.variables():
            v.value = np.zeros_like(v.value)
    rng = np.random.default_rng([plan.seed, 1])
    opt = nc.Adam(net.weight_variables(), lr=plan.weight_lr)
    first = _run_loop(WARMUP, net, gates, data, plan, plan.warmup_iters, [opt], rng,
                      log=log, callback=callback)
    return _checkpoint(WARMUP, net, gates, plan.warmup_iters, {"initial_task_loss": first})


def search_stage(net: CentralNet, gates: Sequence[GateSet], data: SyntheticMtlDataset,
                 plan: TrainPlan, warmup: StageCheckpoint, log: list | None = None,
                 callback: Callback | None = None) -> StageCheckpoint:
    """Train weights and gates jointly on task loss plus squeeze loss, with
    separate Adam states for the two parameter groups."""
    if warmup.stage != WARMUP:
        raise StageError(SEARCH, f"search needs a warm-up checkpoint, got {warmup.stage!r}")
    budget = plan.budget(net.dag.n_edges)
    rng = np.random.default_rng([plan.seed, 2])
    opt_w = nc.Adam(net.weight_variables(), lr=plan.weight_lr)
    opt_g = nc.Adam([v for g in gates for v in g.variables()], lr=plan.upper_lr)
    _run_loop(SEARCH, net, gates, data, plan, plan.search_iters, [opt_w, opt_g], rng,
              lambda_sq=plan.lambda_sq, budget=budget, log=log, callback=callback)
    masses = [obj.gate_mass(g) for g in gates]
    return _checkpoint(SEARCH, net, gates, plan.search_iters,
                       {"gate_mass": masses, "budget": budget})


def finalize(search: StageCheckpoint, dag: RestrictedDag, reducer: str = FLOW,
             target: float | None = None, seed: int = 0
             ) -> tuple[list[GateSet], list[ReductionTrace]]:
    """Reduce every task's sigmoid gates to a binary, connected sub-network.

    Links that end up off every input-to-output path are dropped after the
    reduction so the discrete network carries no dead weights.
    """
    if search.stage != SEARCH:
        raise StageError("finalize", f"needs a search checkpoint, got {search.stage!r}")
    out, traces = [], []
    for k, g in enumerate(search.gate_sets()):
        a = nc.stable_sigmoid(g.alpha.value)
        b = nc.stable_sigmoid(g.beta.value)
        gm = edge_matrix(dag, nc.stable_sigmoid(g.gamma.value))
        trace = reduce(reducer, gm, a, b, target=target, seed=seed + k,
                       n_total_edges=dag.n_edges)
        gs = GateSet(dag.n_states, dag.n_edges, k)
        for src, dst in zip(g.variables(), gs.variables()):
            dst.value = src.value.copy()
        gs.set_discrete(trace.readin_mask, trace.readout_mask, trace.edge_mask(dag))
        live = useful_part(gs.subgraph(dag))
        gs.set_discrete(
            [1.0 if s in live.active_readin else 0.0 for s in range(1, dag.n_states + 1)],
            [1.0 if s in live.active_readout else 0.0 for s in range(1, dag.n_states + 1)],
            [1.0 if e in live.active_edges else 0.0 for e in dag.edges])
        out.append(gs)
        traces.append(trace)
    return out, traces


def fit_discrete(net: CentralNet, gates: Sequence[GateSet], data: SyntheticMtlDataset,
                 plan: TrainPlan, tasks: Sequence[int] | None = None, seed: int | None = None,
                 log: list | None = None, callback: Callback | None = None) -> None:
    """Train the weights of a network whose gates are all discrete."""
    for g in gates:
        if g.mode is not Mode.DISCRETE:
            raise StageError(FINETUNE, "fine-tuning needs discrete gates")
    rng = np.random.default_rng([plan.seed if seed is None else seed, 3])
    opt = nc.Adam(net.weight_variables(), lr=plan.weight_lr)
    _run_loop(FINETUNE, net, gates, data, plan, plan.finetune_iters, [opt], rng, tasks=tasks,
              log=log, callback=callback)


def finetune_stage(net: CentralNet, gates: Sequence[GateSet], data: SyntheticMtlDataset,
                   plan: TrainPlan, warmup: StageCheckpoint, log: list | None = None,
                   callback: Callback | None = None) -> StageCheckpoint:
    """Rewind the weights to the warm-up snapshot, then retrain them on the
    discrete sub-networks. Optimizer moments start fresh."""
    if warmup.stage != WARMUP:
        raise StageError(FINETUNE, f"rewind needs a warm-up checkpoint, got {warmup.stage!r}")
    net.restore(warmup.weights)
    fit_discrete(net, gates, data, plan, log=log, callback=callback)
    return _checkpoint(FINETUNE, net, gates, plan.finetune_iters,
                       {"val_metrics": evaluate(net, gates, data)})


# ---------------------------------------------------------------- experiment

@dataclass
class ExperimentReport:
    plan: dict
    specs: list[dict]
    n_edges: int
    search_param_ratio: float
    search_param_count: int
    param_ratio: float
    param_count: int
    gate_mass: list[float]
    budget: float
    metrics: list[list[float]]
    baselines: dict | None
    delta_tasks: list[float] | None
    delta: float | None
    topology: list[dict]
    masks: list[dict]
    traces: list[dict]
    dot: list[str]
    loss_log: list[dict] = field(repr=False, default_factory=list)
    checkpoints: dict = field(repr=False, default_factory=dict)
    model: dict = field(repr=False, default_factory=dict)

    def summary(self) -> dict:
        """The JSON report: everything except the loss log and checkpoints."""
        d = {f.name: getattr(self, f.name) for f in fields(self)
             if f.name not in ("loss_log", "checkpoints", "model")}
        return json.loads(json.dumps(d))

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=1, sort_keys=True)


def build_network(plan: TrainPlan, data: SyntheticMtlDataset) -> tuple[CentralNet, list[GateSet]]:
    dag = build_restricted_dag(plan.n_states, plan.flow_constant)
    net = CentralNet(dag, data.input_dim, data.head_dims(), plan.state_dim, seed=plan.seed)
    return net, net.new_gates()


def search_phase(plan: TrainPlan, data: SyntheticMtlDataset, log: list | None = None
                 ) -> tuple[CentralNet, StageCheckpoint, StageCheckpoint]:
    net, gates = build_network(plan, data)
    warm = warmup_stage(net, gates, data, plan, log=log)
    search = search_stage(net, gates, data, plan, warm, log=log)
    return net, warm, search


def discrete_phase(net: CentralNet, warm: StageCheckpoint, search: StageCheckpoint,
                   data: SyntheticMtlDataset, plan: TrainPlan, reducer: str = FLOW,
                   target: float | None = None, log: list | None = None
                   ) -> tuple[list[GateSet], list[ReductionTrace], StageCheckpoint]:
    gates, traces = finalize(search, net.dag, reducer, target, seed=plan.seed)
    final = finetune_stage(net, gates, data, plan, warm, log=log)
    return gates, traces, final


def run_experiment(plan: TrainPlan, data: SyntheticMtlDataset,
                   baselines: BaselineResult | None = None, with_baselines: bool = True,
                   reducer: str = FLOW, target: float | None = None) -> ExperimentReport:
    """All stages in order, then metrics, topology and parameter accounting."""
    log: list[dict] = []
    net, warm, search = search_phase(plan, data, log)
    gates, traces, final = discrete_phase(net, warm, search, data, plan, reducer, target, log)
    metrics = final.metrics["val_metrics"]
    if baselines is None and with_baselines:
        baselines = run_baselines(data, plan)
    delta_tasks = delta = None
    if baselines is not None:
        delta_tasks, delta = relative_performance(metrics, baselines.single_metrics, data.specs)
    ratio, raw = count_parameters(net, gates)
    return ExperimentReport(
        plan=asdict(plan),
        specs=[s.as_dict() for s in data.specs],
        n_edges=net.dag.n_edges,
        search_param_ratio=search_space_ratio(net),
        search_param_count=net.n_search_parameters(),
        param_ratio=ratio,
        param_count=raw,
        gate_mass=search.metrics["gate_mass"],
        budget=search.metrics["budget"],
        metrics=metrics,
        baselines=None if baselines is None else baselines.to_dict(),
        delta_tasks=delta_tasks,
        delta=delta,
        topology=[r.as_dict() for r in topology_report(gates, net.dag)],
        masks=[{k: g.to_dict()[k] for k in ("readin_mask", "readout_mask", "edge_mask")}
               for g in gates],
        traces=[t.to_dict() for t in traces],
        dot=[export_dot(g.subgraph(net.dag), spec.name) for g, spec in zip(gates, data.specs)],
        loss_log=log,
        checkpoints={WARMUP: warm, SEARCH: search, FINETUNE: final},
        model=checkpoint_dict(net, gates, {"stage": FINETUNE}),
    )
