"""Task descriptions shared by the network, losses and benchmarks."""

from __future__ import annotations

from dataclasses import dataclass, field

CLASSIFICATION = "classification"
REGRESSION = "regression"


@dataclass(frozen=True)
class Metric:
    name: str
    lower_is_better: bool

    @property
    def orientation(self) -> int:
        """The l_j flag: 1 when a lower value is better, else 0."""
        return int(self.lower_is_better)


ACCURACY = Metric("accuracy", False)
MAE = Metric("mae", True)


@dataclass(frozen=True)
class TaskSpec:
    """One task: its kind, output size and evaluation metrics.

    ``n_outputs`` is the number of classes for classification and the
    target dimension for regression. ``depth`` is the complexity knob used
    by the synthetic generators.
    """

    name: str
    kind: str
    n_outputs: int
    depth: int = 1
    metrics: tuple[Metric, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in (CLASSIFICATION, REGRESSION):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.n_outputs < 1 or (self.kind == CLASSIFICATION and self.n_outputs < 2):
            raise ValueError(f"task {self.name!r}: bad output size {self.n_outputs}")
        if self.depth < 1:
            raise ValueError(f"task {self.name!r}: depth must be >= 1")
        if not self.metrics:
            default = (ACCURACY,) if self.kind == CLASSIFICATION else (MAE,)
            object.__setattr__(self, "metrics", default)

    def as_dict(self) -> dict:
        return {
            "name": self.name, "kind": self.kind, "n_outputs": self.n_outputs,
            "depth": self.depth,
            "metrics": [[m.name, m.lower_is_better] for m in self.metrics],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(d["name"], d["kind"], int(d["n_outputs"]), int(d.get("depth", 1)),
                   tuple(Metric(n, bool(l)) for n, l in d.get("metrics", [])))
