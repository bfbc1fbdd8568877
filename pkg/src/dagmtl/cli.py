"""Command-line harness: ``train``, ``sweep``, ``compare-reducers`` and ``analyze``.

A run is configured by one flat JSON document whose keys mirror
:class:`~dagmtl.pipeline.TrainPlan` plus a few harness settings. Every key
has a default, so ``{}`` is a valid config. Exit codes: 0 on success, 2 for
a bad config or missing inputs, 3 when a run aborts.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

from .evalbench import (BaselineResult, SyntheticMtlDataset, default_heterogeneous_specs,
                        gen_heterogeneous, gen_homogeneous, relative_performance, run_baselines)
from .graphtop import build_restricted_dag
from .pipeline import (StageError, TrainPlan, discrete_phase, run_experiment, search_phase)
from .reduction import FLOW, REDUCERS

log = logging.getLogger("dagmtl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
METRICS_SCHEMA = "# schema: dagmtl.metrics v1"
SWEEP_SCHEMA = "# schema: dagmtl.sweep v1"
REDUCERS_SCHEMA = "# schema: dagmtl.reducers v1"
SCENARIOS = ("heterogeneous", "homogeneous")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # TrainPlan fields
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
    # harness settings
    scenario: str = "heterogeneous"
    n_tasks: int = 3
    n_classes: int = 4
    n_samples: int = 2000
    out_dir: str = "runs/default"
    reducer: str = FLOW
    target_sparsity: float | None = None
    baselines: bool = True
    sweep_flow_constants: list = field(default_factory=lambda: [3, 5, 7])
    sweep_seeds: list = field(default_factory=lambda: [0])
    sparsity_grid: list = field(default_factory=lambda: [1.0, 0.6, 0.4, 0.2])

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def validate(self) -> None:
        ints = ("warmup_iters", "search_iters", "finetune_iters", "batch_size", "seed",
                "flow_constant", "n_states", "state_dim", "log_every", "n_tasks",
                "n_classes", "n_samples")
        for name in ints:
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"config key {name!r} must be an integer")
        for name in ("weight_lr", "upper_lr", "lambda_sq", "kappa", "target_sparsity"):
            v = getattr(self, name)
            if v is None and name in ("kappa", "target_sparsity"):
                continue
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"config key {name!r} must be a number")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"config key 'scenario' must be one of {SCENARIOS}")
        if self.reducer not in REDUCERS:
            raise ConfigError(f"config key 'reducer' must be one of {REDUCERS}")
        if self.reducer != FLOW and self.target_sparsity is None:
            raise ConfigError("config key 'target_sparsity' is required for this reducer")
        if self.target_sparsity is not None and not 0 < self.target_sparsity <= 1:
            raise ConfigError("config key 'target_sparsity' must lie in (0, 1]")
        if not isinstance(self.baselines, bool):
            raise ConfigError("config key 'baselines' must be true or false")
        if not isinstance(self.out_dir, str) or not self.out_dir:
            raise ConfigError("config key 'out_dir' must be a non-empty string")
        for name in ("sweep_flow_constants", "sweep_seeds"):
            v = getattr(self, name)
            if not isinstance(v, list) or not v or not all(
                    isinstance(x, int) and not isinstance(x, bool) for x in v):
                raise ConfigError(f"config key {name!r} must be a non-empty list of integers")
        grid = self.sparsity_grid
        if not isinstance(grid, list) or not grid or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) and 0 < x <= 1
                for x in grid):
            raise ConfigError("config key 'sparsity_grid' must be a non-empty list in (0, 1]")
        try:
            self.plan()
        except ValueError as exc:
            raise ConfigError(f"config: {exc}") from None

    def check_sweep(self) -> None:
        """Sweep values are only checked when a sweep runs, so a small
        ``n_states`` does not force the sweep list to be overridden."""
        for m in self.sweep_flow_constants:
            if not 1 <= m <= self.n_states - 1:
                raise ConfigError(
                    f"config key 'sweep_flow_constants': {m} outside [1, {self.n_states - 1}]")

    def plan(self, **overrides) -> TrainPlan:
        d = {name: getattr(self, name) for name in TrainPlan.field_names()}
        d.update(overrides)
        return TrainPlan(**d)

    def dataset(self, seed: int | None = None) -> SyntheticMtlDataset:
        seed = self.seed if seed is None else seed
        if self.scenario == "homogeneous":
            return gen_homogeneous(seed, self.n_tasks, self.n_classes, self.n_samples)
        return gen_heterogeneous(seed, default_heterogeneous_specs(), self.n_samples)


def load_config(path: str | None, seed: int | None = None, out: str | None = None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        cfg = RunConfig.from_json(text)
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out_dir = out
    cfg.validate()
    return cfg


# ------------------------------------------------------------------- writers

def _write_csv(path: Path, schema: str, header: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(schema + "\n")
        writer = csv.DictWriter(fh, fieldnames=list(header), extrasaction="ignore",
                                lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_run(out: Path, cfg: RunConfig, report) -> None:
    """All artifacts of one training run."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    (out / "report.json").write_text(report.to_json() + "\n")
    n_tasks = len(report.specs)
    header = ["stage", "iteration", "task_loss", "squeeze_loss", "train_loss", "lambda_sq",
              "budget"] + [f"loss_task{k}" for k in range(n_tasks)]
    _write_csv(out / "metrics.csv", METRICS_SCHEMA, header, report.loss_log)
    for spec, dot, trace in zip(report.specs, report.dot, report.traces):
        (out / f"{spec['name']}.dot").write_text(dot)
        (out / f"trace_{spec['name']}.json").write_text(json.dumps(trace, indent=1) + "\n")
    ckpt = out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    for stage, c in report.checkpoints.items():
        (ckpt / f"{stage}.json").write_text(json.dumps(c.to_dict()))
    (ckpt / "model.json").write_text(json.dumps(report.model))


# ------------------------------------------------------------------ commands

def cmd_train(cfg: RunConfig) -> int:
    data = cfg.dataset()
    plan = cfg.plan()
    log.info("train: N=%d M=%d seed=%d", plan.n_states, plan.flow_constant, plan.seed)
    report = run_experiment(plan, data, with_baselines=cfg.baselines, reducer=cfg.reducer,
                            target=cfg.target_sparsity)
    write_run(Path(cfg.out_dir), cfg, report)
    if report.delta is not None:
        log.info("delta_T = %+.2f, param ratio = %.2f", report.delta, report.param_ratio)
    return EXIT_OK


def _baseline_job(args):
    cfg, seed = args
    return seed, run_baselines(cfg.dataset(seed), cfg.plan(seed=seed))


def _sweep_job(args):
    cfg, m, seed, baselines = args
    row = {"M": m, "seed": seed}
    try:
        data = cfg.dataset(seed)
        plan = cfg.plan(seed=seed, flow_constant=m)
        report = run_experiment(plan, data, baselines=baselines, reducer=cfg.reducer,
                                target=cfg.target_sparsity)
        cell = RunConfig.from_dict({**asdict(cfg), "seed": seed, "flow_constant": m})
        write_run(Path(cfg.out_dir) / f"M{m}_seed{seed}", cell, report)
    except (StageError, ValueError, FloatingPointError, ZeroDivisionError) as exc:
        row.update(status=f"failed: {exc}")
        return row
    row.update(status="ok", delta_T=report.delta, param_ratio=report.param_ratio,
               search_param_ratio=report.search_param_ratio,
               search_param_count=report.search_param_count)
    for spec, topo in zip(report.specs, report.topology):
        for key in ("D", "W", "S"):
            row[f"{key}_{spec['name']}"] = topo[key]
    return row


def _map(fn, jobs: list, n_workers: int) -> list:
    if n_workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, jobs))


def sweep_cells(cfg: RunConfig) -> list[tuple[int, int]]:
    """The (M, seed) grid in config order with duplicates dropped."""
    return list(dict.fromkeys((m, s) for m in cfg.sweep_flow_constants
                              for s in cfg.sweep_seeds))


def cmd_sweep(cfg: RunConfig, n_workers: int = 1) -> int:
    cfg.check_sweep()
    cells = sweep_cells(cfg)
    seeds = list(dict.fromkeys(s for _, s in cells))
    baselines: dict[int, BaselineResult | None] = {s: None for s in seeds}
    if cfg.baselines:
        baselines.update(_map(_baseline_job, [(cfg, s) for s in seeds], n_workers))
    log.info("sweep: %d cells", len(cells))
    rows = _map(_sweep_job, [(cfg, m, s, baselines[s]) for m, s in cells], n_workers)
    names = [s.name for s in cfg.dataset(seeds[0]).specs]
    header = ["M", "seed", "status", "delta_T", "param_ratio", "search_param_ratio",
              "search_param_count"] + [f"{k}_{n}" for n in names for k in ("D", "W", "S")]
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "sweep.csv", SWEEP_SCHEMA, header, rows)
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        log.error("cell M=%s seed=%s %s", r["M"], r["seed"], r["status"])
    return EXIT_RUNTIME if failed else EXIT_OK


def compare_reducers(cfg: RunConfig) -> list[dict]:
    """Fine-tune each reducer's sub-networks at every grid sparsity and
    compare against the sub-networks with no edge removed."""
    data = cfg.dataset()
    plan = cfg.plan()
    net, warm, search = search_phase(plan, data)
    cache: dict[str, list] = {}

    def finetuned(reducer, target):
        gates, traces, final = discrete_phase(net, warm, search, data, plan, reducer, target)
        key = json.dumps([g.to_dict()[k] for g in gates
                          for k in ("readin_mask", "readout_mask", "edge_mask")])
        if key not in cache:
            cache[key] = final.metrics["val_metrics"]
        return cache[key], traces

    reference, _ = finetuned(FLOW, 1.0)
    rows = []
    for tau in cfg.sparsity_grid:
        for reducer in REDUCERS:
            metrics, traces = finetuned(reducer, float(tau))
            _, delta = relative_performance(metrics, reference, data.specs)
            rows.append({
                "tau": float(tau), "reducer": reducer, "degradation": -delta,
                "removed": sum(len(t.removed) for t in traces),
                "sparsity": sum(t.hidden_sparsity for t in traces) / len(traces),
                "termination": "|".join(t.termination for t in traces),
                "metrics": json.dumps(metrics),
            })
    return rows


def cmd_compare_reducers(cfg: RunConfig) -> int:
    rows = compare_reducers(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ["tau", "reducer", "degradation", "removed", "sparsity", "termination", "metrics"]
    _write_csv(out / "reducers.csv", REDUCERS_SCHEMA, header, rows)
    for r in rows:
        print(f"tau={r['tau']:.2f} {r['reducer']:<9} degradation={r['degradation']:+.2f}%")
    return EXIT_OK


def analyze(report: dict) -> str:
    """Topology table, adjacency overlay and shared-edge counts as text."""
    plan = report["plan"]
    dag = build_restricted_dag(plan["n_states"], plan["flow_constant"])
    names = [s["name"] for s in report["specs"]]
    masks = [m["edge_mask"] for m in report["masks"]]
    lines = [f"{'task':<12}{'D':>4}{'W':>4}{'S':>8}"]
    for name, topo in zip(names, report["topology"]):
        lines.append(f"{name:<12}{topo['D']:>4}{topo['W']:>4}{topo['S']:>8.3f}")
    lines.append("")
    lines.append("edge overlay (digits = tasks using the edge, '.' = unused)")
    cell = {e: "".join(str(k) for k, m in enumerate(masks) if m[n] > 0) or "."
            for n, e in enumerate(dag.edges)}
    w = max(len(names), 2)
    n = dag.n_states
    lines.append(" " * 4 + "".join(f"v{j:<{w}}" for j in range(1, n + 1)))
    for i in range(1, n + 1):
        row = "".join(f"{cell.get((i, j), ' '):<{w + 1}}" for j in range(1, n + 1))
        lines.append(f"v{i:<3}" + row)
    lines.append("")
    lines.append("shared edges per task pair")
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            shared = sum(1 for x, y in zip(masks[a], masks[b]) if x > 0 and y > 0)
            lines.append(f"{names[a]}-{names[b]}: {shared}")
    return "\n".join(lines)


def cmd_analyze(run_dir: str) -> int:
    path = Path(run_dir) / "report.json"
    if not path.is_file():
        print(f"error: {path} not found", file=sys.stderr)
        return EXIT_CONFIG
    print(analyze(json.loads(path.read_text())))
    return EXIT_OK


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dagmtl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("train", "sweep", "compare-reducers", "analyze"):
        s = sub.add_parser(name)
        if name == "analyze":
            s.add_argument("run_dir", nargs="?", help="run directory (defaults to --out)")
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--out", help="output directory (overrides out_dir)")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        s.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out)
    except (ConfigError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, max(1, args.jobs))
        if args.command == "compare-reducers":
            return cmd_compare_reducers(cfg)
        return cmd_analyze(args.run_dir or cfg.out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, FloatingPointError, ValueError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
