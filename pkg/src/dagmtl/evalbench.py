"""Synthetic multi-task data, evaluation metrics and reference baselines.

Every task reads the same inputs through a shared latent map. Each task
then applies its own stack of ``depth`` random affine+tanh layers, so task
difficulty can be set per task to mimic unbalanced task complexity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .centralnet import CentralNet, GateSet, Mode, predict
from .graphtop import RestrictedDag, TopologyReport, topology
from .tasks import CLASSIFICATION, REGRESSION, TaskSpec

DATASET_FORMAT = "dagmtl-dataset"
DATASET_VERSION = 1


@dataclass
class SyntheticMtlDataset:
    seed: int
    specs: list[TaskSpec]
    x_train: np.ndarray
    x_val: np.ndarray
    y_train: list[np.ndarray]
    y_val: list[np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.x_train.shape[1]

    @property
    def n_tasks(self) -> int:
        return len(self.specs)

    def head_dims(self) -> list[int]:
        return [s.n_outputs for s in self.specs]

    def save(self, path) -> None:
        """Write an ``.npz`` archive; a JSON header describes the tasks."""
        header = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "seed": self.seed,
                  "specs": [s.as_dict() for s in self.specs], "meta": self.meta}
        arrays = {"x_train": self.x_train, "x_val": self.x_val}
        for k in range(self.n_tasks):
            arrays[f"y_train_{k}"] = self.y_train[k]
            arrays[f"y_val_{k}"] = self.y_val[k]
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header)), **arrays)

    @classmethod
    def load(cls, path) -> "SyntheticMtlDataset":
        with np.load(path) as z:
            header = json.loads(str(z["header"]))
            if header.get("format") != DATASET_FORMAT or header.get("version") != DATASET_VERSION:
                raise ValueError(f"{path}: not a {DATASET_FORMAT} v{DATASET_VERSION} file")
            specs = [TaskSpec.from_dict(s) for s in header["specs"]]
            k = len(specs)
            return cls(header["seed"], specs, z["x_train"], z["x_val"],
                       [z[f"y_train_{i}"] for i in range(k)],
                       [z[f"y_val_{i}"] for i in range(k)], header["meta"])


def _random_layer(rng, fan_in, fan_out, gain):
    return rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_in, fan_out)), \
        rng.normal(0.0, 0.5, size=fan_out)


def _generate(seed: int, specs: Sequence[TaskSpec], n_samples: int, input_dim: int,
              latent_dim: int, val_fraction: float, gain: float, noise: float
              ) -> SyntheticMtlDataset:
    if len(specs) < 1 or n_samples < 10 or input_dim < 1 or latent_dim < 1:
        raise ValueError("degenerate dataset size")
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n_samples, input_dim))
    w0, b0 = _random_layer(rng, input_dim, latent_dim, 1.0)
    latent = np.tanh(x @ w0 + b0)
    targets = []
    for spec in specs:
        h = latent
        for _ in range(spec.depth):
            w, b = _random_layer(rng, h.shape[1], latent_dim, gain)
            h = np.tanh(h @ w + b)
        if spec.kind == CLASSIFICATION:
            score = h @ rng.normal(size=latent_dim)
            score = score + noise * score.std() * rng.normal(size=n_samples)
            # equal-mass quantile bins give uniform labels
            ranks = np.argsort(np.argsort(score, kind="stable"), kind="stable")
            targets.append((ranks * spec.n_outputs // n_samples).astype(np.int64))
        else:
            y = h @ rng.normal(size=(latent_dim, spec.n_outputs))
            y = (y - y.mean(axis=0)) / y.std(axis=0)
            y = y + noise * rng.normal(size=y.shape)
            targets.append(y)
    n_val = int(round(n_samples * val_fraction))
    n_train = n_samples - n_val
    return SyntheticMtlDataset(
        seed, list(specs), x[:n_train], x[n_train:],
        [t[:n_train] for t in targets], [t[n_train:] for t in targets],
        {"n_samples": n_samples, "input_dim": input_dim, "latent_dim": latent_dim,
         "val_fraction": val_fraction, "gain": gain, "noise": noise})


def gen_homogeneous(seed: int, n_tasks: int, n_classes: int, n_samples: int,
                    input_dim: int = 8, latent_dim: int = 8, depth: int = 2,
                    val_fraction: float = 0.25, gain: float = 2.0, noise: float = 0.0
                    ) -> SyntheticMtlDataset:
    """``n_tasks`` classification tasks, each a different labelling of the
    shared latents."""
    if n_tasks < 2:
        raise ValueError("a homogeneous scenario needs at least 2 tasks")
    specs = [TaskSpec(f"cls{k}", CLASSIFICATION, n_classes, depth) for k in range(n_tasks)]
    return _generate(seed, specs, n_samples, input_dim, latent_dim, val_fraction, gain, noise)


def gen_heterogeneous(seed: int, specs: Sequence[TaskSpec], n_samples: int = 2000,
                      input_dim: int = 8, latent_dim: int = 8, val_fraction: float = 0.25,
                      gain: float = 2.0, noise: float = 0.0) -> SyntheticMtlDataset:
    return _generate(seed, specs, n_samples, input_dim, latent_dim, val_fraction, gain, noise)


def default_heterogeneous_specs() -> list[TaskSpec]:
    return [TaskSpec("cls", CLASSIFICATION, 4, depth=1),
            TaskSpec("reg", REGRESSION, 1, depth=3)]


# ------------------------------------------------------------------- metrics

def metric_values(spec: TaskSpec, pred: np.ndarray, target: np.ndarray) -> list[float]:
    out = []
    for m in spec.metrics:
        if m.name == "accuracy":
            out.append(float(np.mean(pred.argmax(axis=1) == target)))
        elif m.name == "mae":
            out.append(float(np.mean(np.abs(pred - target.reshape(pred.shape)))))
        else:
            raise ValueError(f"unknown metric {m.name!r}")
    return out


def evaluate(net: CentralNet, all_gates: Sequence[GateSet], data: SyntheticMtlDataset,
             tasks: Sequence[int] | None = None) -> list[list[float]]:
    """Validation metrics for each task, in ``spec.metrics`` order."""
    tasks = range(data.n_tasks) if tasks is None else tasks
    out = []
    for head, k in enumerate(tasks):
        pred = predict(net, all_gates[head], head, data.x_val).value
        out.append(metric_values(data.specs[k], pred, data.y_val[k]))
    return out


def relative_performance(method_metrics: Sequence[Sequence[float]],
                         single_metrics: Sequence[Sequence[float]],
                         specs: Sequence[TaskSpec]) -> tuple[list[float], float]:
    """Per-task signed percentage change against the single-task reference,
    averaged over each task's metrics, and the mean over tasks."""
    if not len(method_metrics) == len(single_metrics) == len(specs):
        raise ValueError("metric lists are not aligned with the task specs")
    per_task = []
    for mm, sm, spec in zip(method_metrics, single_metrics, specs):
        if not len(mm) == len(sm) == len(spec.metrics):
            raise ValueError(f"task {spec.name!r}: metric count mismatch")
        total = 0.0
        for value, ref, metric in zip(mm, sm, spec.metrics):
            if ref == 0:
                raise ZeroDivisionError(f"task {spec.name!r}: single-task {metric.name} is 0")
            total += (-1) ** metric.orientation * (value - ref) / ref
        per_task.append(100.0 * total / len(spec.metrics))
    return per_task, float(np.mean(per_task))


def topology_report(all_gates: Sequence[GateSet], dag: RestrictedDag) -> list[TopologyReport]:
    reports = []
    for g in all_gates:
        if g.mode is not Mode.DISCRETE:
            raise ValueError("topology_report needs discrete gate sets")
        sub = g.subgraph(dag)
        if not sub.active_edges:
            # a single state read in and out directly has no DAG edges
            if not set(sub.active_readin) & set(sub.active_readout):
                raise ValueError(f"task {g.task}: sub-network is empty")
            reports.append(TopologyReport(0, 0, 0.0))
            continue
        reports.append(topology(sub))
    return reports


# ----------------------------------------------------------------- baselines

@dataclass
class BaselineResult:
    single_metrics: list[list[float]]
    shared_metrics: list[list[float]]
    single_ratio: float
    shared_ratio: float

    def to_dict(self) -> dict:
        return {"single_metrics": self.single_metrics, "shared_metrics": self.shared_metrics,
                "single_ratio": self.single_ratio, "shared_ratio": self.shared_ratio}


def run_baselines(data: SyntheticMtlDataset, plan) -> BaselineResult:
    """Single-task (one chain per task) and shared-bottom (one chain, K heads)
    references, each trained for the fine-tune budget."""
    from .centralnet import backbone_parameters, backbone_reference, chain_gates
    from .graphtop import build_restricted_dag
    from .pipeline import fit_discrete

    dag = build_restricted_dag(plan.n_states, 1)
    single_metrics, single_backbone, reference = [], 0, None
    for k, spec in enumerate(data.specs):
        net = CentralNet(dag, data.input_dim, [spec.n_outputs], plan.state_dim,
                         seed=plan.seed + 1000 + k)
        gates = [chain_gates(dag)]
        fit_discrete(net, gates, data, plan, tasks=[k], seed=plan.seed + 2000 + k)
        single_metrics.extend(evaluate(net, gates, data, tasks=[k]))
        single_backbone += backbone_parameters(net, gates)
        reference = backbone_reference(net)

    net = CentralNet(dag, data.input_dim, data.head_dims(), plan.state_dim, seed=plan.seed + 3000)
    gates = [chain_gates(dag, k) for k in range(data.n_tasks)]
    fit_discrete(net, gates, data, plan, seed=plan.seed + 4000)
    shared_metrics = evaluate(net, gates, data)
    shared_ratio = backbone_parameters(net, gates) / backbone_reference(net)
    return BaselineResult(single_metrics, shared_metrics, single_backbone / reference, shared_ratio)
