import numpy as np
import pytest

from dagmtl import objectives as obj
from dagmtl.centralnet import Mode, chain_gates, predict
from dagmtl.evalbench import default_heterogeneous_specs, gen_heterogeneous
from dagmtl.graphtop import reachable
from dagmtl.pipeline import (FINETUNE, SEARCH, WARMUP, StageCheckpoint, StageError, TrainPlan,
                             build_network, finalize, finetune_stage, run_experiment,
                             search_phase, search_stage, warmup_stage)
from dagmtl.reduction import RANDOM, THRESHOLD

PLAN = TrainPlan(warmup_iters=60, search_iters=80, finetune_iters=60, weight_lr=3e-3,
                 n_states=5, flow_constant=2, state_dim=8, batch_size=16, log_every=10)


@pytest.fixture(scope="module")
def data():
    return gen_heterogeneous(0, default_heterogeneous_specs(), 300)


@pytest.fixture(scope="module")
def searched(data):
    return search_phase(PLAN, data)


def plan(**kw):
    return TrainPlan(**{**PLAN.__dict__, **kw})


def val_loss(net, gates, data):
    preds = [predict(net, gates[k], k, data.x_val) for k in range(data.n_tasks)]
    return obj.task_loss(preds, data.y_val, data.specs).item()


# ---------------------------------------------------------------- warm-up

def test_warmup_freezes_gates_at_zero(data):
    net, gates = build_network(PLAN, data)
    for g in gates:
        g.gamma.value = np.full(g.n_edges, 3.0)
    before = val_loss(net, gates, data)
    seen = []
    warm = warmup_stage(net, gates, data, PLAN,
                        callback=lambda s, it, n, gs: seen.append(
                            all(np.all(v.value == 0) for g in gs for v in g.variables())))
    assert all(seen) and len(seen) == PLAN.warmup_iters
    assert all(np.all(v.value == 0) for g in gates for v in g.variables())
    assert all(np.all(np.asarray(v) == 0) for g in warm.gates for k, v in g.items()
               if k in ("alpha", "beta", "gamma"))
    assert val_loss(net, gates, data) < before
    assert warm.stage == WARMUP and warm.iteration == PLAN.warmup_iters


# ----------------------------------------------------------------- search

def test_search_moves_gates_and_records_mass(searched, data):
    net, warm, search = searched
    gates = search.gate_sets()
    assert any(np.any(g.gamma.value != 0) for g in gates)
    assert search.metrics["budget"] == 0.4 * net.dag.n_edges
    assert search.metrics["gate_mass"] == [obj.gate_mass(g) for g in gates]


def test_lambda_has_no_effect_while_under_budget(data):
    def gates_after(lam):
        p = plan(lambda_sq=lam, kappa=1e6, search_iters=30)
        net, gates = build_network(p, data)
        warm = warmup_stage(net, gates, data, p)
        return [g.to_dict() for g in search_stage(net, gates, data, p, warm).gate_sets()]

    assert gates_after(0.0) == gates_after(0.5)


def test_squeeze_lowers_gate_mass(data):
    def mass(lam):
        p = plan(lambda_sq=lam, kappa=0.0, search_iters=60)
        net, gates = build_network(p, data)
        warm = warmup_stage(net, gates, data, p)
        return sum(search_stage(net, gates, data, p, warm).metrics["gate_mass"])

    assert mass(1.0) < mass(0.0)


# --------------------------------------------------------------- finalize

@pytest.mark.parametrize("reducer,target", [("flow", None), ("flow", 0.5), (RANDOM, 0.3),
                                            (THRESHOLD, 0.3)])
def test_finalize_gives_binary_reachable_masks(searched, reducer, target):
    net, _, search = searched
    gates, traces = finalize(search, net.dag, reducer, target)
    for g, t in zip(gates, traces):
        assert g.mode is Mode.DISCRETE
        for m in (g.readin_mask, g.readout_mask, g.edge_mask):
            assert set(np.unique(m)) <= {0.0, 1.0}
        assert reachable(g.subgraph(net.dag))
        # pruning dead links never adds edges back
        assert np.all(g.edge_mask <= t.edge_mask(net.dag))
        assert g.edge_mask.sum() / net.dag.n_edges <= 1.0


def test_finalize_is_deterministic_and_per_task(searched):
    net, _, search = searched
    a, _ = finalize(search, net.dag)
    b, _ = finalize(search, net.dag)
    assert [g.to_dict() for g in a] == [g.to_dict() for g in b]
    # changing task 1's gates leaves task 0's mask alone
    other = StageCheckpoint(SEARCH, search.weights, [dict(g) for g in search.gates], 0)
    other.gates[1] = {**other.gates[1], "gamma": list(-np.asarray(other.gates[1]["gamma"]))}
    c, _ = finalize(other, net.dag)
    assert c[0].to_dict() == a[0].to_dict()


def test_identical_gates_give_identical_masks(searched):
    net, _, search = searched
    twin = StageCheckpoint(SEARCH, search.weights,
                           [search.gates[0], {**search.gates[0], "task": 1}], 0)
    gates, _ = finalize(twin, net.dag)
    for key in ("readin_mask", "readout_mask", "edge_mask"):
        assert np.array_equal(getattr(gates[0], key), getattr(gates[1], key))


# -------------------------------------------------------------- fine-tune

def test_finetune_rewinds_and_keeps_masks(searched, data):
    net, warm, search = searched
    gates, _ = finalize(search, net.dag)
    masks = [g.to_dict() for g in gates]
    first = {}

    def spy(stage, it, n, gs):
        if it == 0:
            first.update(n.snapshot())
            first["loss"] = val_loss(n, gs, data)

    final = finetune_stage(net, gates, data, PLAN, warm, callback=spy)
    for tag, value in warm.weights.items():
        assert np.array_equal(first[tag], value)
    assert [g.to_dict() for g in gates] == masks
    assert final.stage == FINETUNE
    assert val_loss(net, gates, data) < first["loss"]


def test_finetune_leaves_gate_values_alone(searched, data):
    net, warm, search = searched
    gates, _ = finalize(search, net.dag)
    before = [v.value.copy() for g in gates for v in g.variables()]
    finetune_stage(net, gates, data, plan(finetune_iters=5), warm)
    after = [v.value for g in gates for v in g.variables()]
    assert all(np.array_equal(x, y) for x, y in zip(before, after))


# ---------------------------------------------------------- stage ordering

def test_stage_order_is_enforced(searched, data):
    net, warm, search = searched
    gates, _ = finalize(search, net.dag)
    with pytest.raises(StageError, match="warm-up checkpoint"):
        search_stage(net, search.gate_sets(), data, PLAN, search)
    with pytest.raises(StageError, match="search checkpoint"):
        finalize(warm, net.dag)
    with pytest.raises(StageError, match="warm-up checkpoint"):
        finetune_stage(net, gates, data, PLAN, search)
    with pytest.raises(StageError, match="discrete"):
        finetune_stage(net, search.gate_sets(), data, PLAN, warm)
    with pytest.raises(StageError, match="continuous"):
        warmup_stage(net, [chain_gates(net.dag, k) for k in range(2)], data, PLAN)


def test_non_finite_loss_aborts_with_stage(data):
    bad = gen_heterogeneous(0, default_heterogeneous_specs(), 300)
    bad.x_train = bad.x_train.copy()
    bad.x_train[:] = np.nan
    net, gates = build_network(PLAN, bad)
    with pytest.raises(StageError, match=r"\[warmup\]") as info:
        warmup_stage(net, gates, bad, PLAN)
    assert info.value.stage == WARMUP


def test_plan_validation():
    with pytest.raises(ValueError, match="flow_constant"):
        TrainPlan(n_states=4, flow_constant=4)
    with pytest.raises(ValueError, match="lambda_sq"):
        TrainPlan(lambda_sq=-1)
    with pytest.raises(ValueError, match="weight_lr"):
        TrainPlan(weight_lr=0)
    with pytest.raises(ValueError, match="warmup_iters"):
        TrainPlan(warmup_iters=0)
    assert TrainPlan().budget(30) == 12.0 and TrainPlan(kappa=3).budget(30) == 3.0


def test_complete_dag_edge_count(data):
    net, _ = build_network(plan(flow_constant=4), data)
    assert net.dag.n_edges == 5 * 4 // 2


# ------------------------------------------------------------- experiment

def test_run_experiment_is_deterministic(data):
    p = plan(warmup_iters=20, search_iters=20, finetune_iters=20)
    a = run_experiment(p, data, with_baselines=False)
    b = run_experiment(p, data, with_baselines=False)
    assert a.to_json() == b.to_json()
    assert a.delta is None and a.baselines is None
    assert [row["stage"] for row in a.loss_log][0] == WARMUP
    assert set(a.checkpoints) == {WARMUP, SEARCH, FINETUNE}
    assert a.param_ratio <= a.search_param_ratio


def test_run_experiment_with_baselines(data):
    p = plan(warmup_iters=10, search_iters=10, finetune_iters=10)
    report = run_experiment(p, data)
    assert report.baselines["single_ratio"] == 2.0
    assert report.baselines["shared_ratio"] == 1.0
    assert len(report.delta_tasks) == 2
    assert report.delta == pytest.approx(np.mean(report.delta_tasks))
    assert len(report.dot) == len(report.topology) == len(report.masks) == 2
