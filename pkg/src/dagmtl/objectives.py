"""Task loss, squeeze loss and the combined search objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .centralnet import GateSet, Mode
from .numcore import Variable
from .tasks import CLASSIFICATION, TaskSpec

DEFAULT_BUDGET_FRACTION = 0.4


@dataclass
class LossBreakdown:
    task_losses: list[float]
    task_loss_total: float
    squeeze_loss: float
    train_loss: float
    lambda_sq: float
    budget: float

    def row(self) -> dict:
        d = {f"loss_task{k}": v for k, v in enumerate(self.task_losses)}
        d.update(task_loss=self.task_loss_total, squeeze_loss=self.squeeze_loss,
                 train_loss=self.train_loss, lambda_sq=self.lambda_sq, budget=self.budget)
        return d


def default_budget(n_edges: int) -> float:
    return DEFAULT_BUDGET_FRACTION * n_edges


def single_task_loss(pred: Variable, target, spec: TaskSpec) -> Variable:
    if spec.kind == CLASSIFICATION:
        return nc.softmax_cross_entropy(pred, target)
    return nc.l2_loss(pred, np.asarray(target, dtype=float).reshape(pred.shape))


def task_losses(preds: Sequence[Variable], targets: Sequence, specs: Sequence[TaskSpec]
                ) -> list[Variable]:
    if not len(preds) == len(targets) == len(specs):
        raise ValueError(
            f"task_loss: {len(preds)} predictions, {len(targets)} targets, {len(specs)} specs")
    return [single_task_loss(p, t, s) for p, t, s in zip(preds, targets, specs)]


def task_loss(preds: Sequence[Variable], targets: Sequence, specs: Sequence[TaskSpec]) -> Variable:
    """Unweighted sum of the per-task losses."""
    return nc.add_n(task_losses(preds, targets, specs))


def squeeze_loss(all_gates: Sequence[GateSet], budget: float) -> Variable:
    """Sum over tasks of max(sum of that task's sigmoid edge gates - budget, 0)."""
    terms = []
    for g in all_gates:
        if g.mode is not Mode.CONTINUOUS:
            raise ValueError("squeeze_loss is only defined for continuous gates")
        mass = nc.sum_all(nc.sigmoid(g.gamma))
        terms.append(nc.relu(nc.add_scalar(mass, -budget)))
    return nc.add_n(terms)


def train_loss(task: Variable, squeeze: Variable, lambda_sq: float) -> Variable:
    if lambda_sq < 0:
        raise ValueError(f"lambda_sq must be >= 0, got {lambda_sq}")
    return nc.add(task, nc.scalar_mul(squeeze, lambda_sq))


def gate_mass(gates: GateSet) -> float:
    return float(nc.stable_sigmoid(gates.gamma.value).sum())
