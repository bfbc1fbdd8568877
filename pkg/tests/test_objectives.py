import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dagmtl import numcore as nc
from dagmtl import objectives as obj
from dagmtl.centralnet import GateSet
from dagmtl.numcore import Variable
from dagmtl.tasks import CLASSIFICATION, REGRESSION, TaskSpec

from helpers import numeric_grad

REG = TaskSpec("r", REGRESSION, 2)
CLS = TaskSpec("c", CLASSIFICATION, 4)


def gates_with(values, task=0):
    g = GateSet(3, len(values), task)
    g.gamma.value = np.asarray(values, dtype=float)
    return g


def test_perfect_regression_contributes_zero():
    y = np.arange(6.0).reshape(3, 2)
    assert obj.task_loss([Variable(y)], [y], [REG]).item() == 0.0


def test_uniform_logits_give_log_c():
    loss = obj.task_loss([Variable(np.zeros((5, 4)))], [np.arange(5) % 4], [CLS])
    assert loss.item() == pytest.approx(np.log(4), abs=1e-12)


def test_task_loss_is_a_plain_sum():
    # MSE of a constant offset c is c^2
    preds = [Variable(np.full((2, 2), np.sqrt(0.3))), Variable(np.full((2, 2), np.sqrt(0.7)))]
    total = obj.task_loss(preds, [np.zeros((2, 2))] * 2, [REG, REG])
    assert total.item() == pytest.approx(1.0, abs=1e-12)


def test_task_count_mismatch():
    with pytest.raises(ValueError, match="task_loss"):
        obj.task_loss([Variable(np.zeros((1, 2)))], [], [REG])


def test_squeeze_examples():
    assert obj.squeeze_loss([gates_with(np.zeros(30))], 10).item() == 5.0
    assert obj.squeeze_loss([gates_with(np.full(30, -5.0))], 10).item() == 0.0
    # three tasks, each with mass 12 (24 gates at sigma = 0.5)
    three = [gates_with(np.zeros(24), k) for k in range(3)]
    assert obj.squeeze_loss(three, 10).item() == 6.0


def test_squeeze_rejects_discrete_gates():
    g = gates_with(np.zeros(2))
    g.set_discrete([1, 0, 0], [0, 0, 1], [1, 1])
    with pytest.raises(ValueError, match="continuous"):
        obj.squeeze_loss([g], 1.0)


def test_train_loss_examples():
    task, sq = Variable([1.0]), Variable([5.0])
    assert obj.train_loss(task, sq, 0.05).item() == 1.25
    assert obj.train_loss(task, sq, 0.0).item() == 1.0
    assert obj.train_loss(task, Variable([0.0]), 0.05).item() == 1.0
    with pytest.raises(ValueError, match="lambda_sq"):
        obj.train_loss(task, sq, -0.1)


def test_train_loss_gradient_reaches_both_terms():
    a, b = Variable([2.0]), Variable([3.0])
    nc.backward(obj.train_loss(nc.mul(a, a), nc.mul(b, b), 0.5))
    assert a.grad[0] == 4.0 and b.grad[0] == 3.0


def test_squeeze_gradient_is_sigmoid_derivative_above_budget():
    rng = np.random.default_rng(0)
    g = gates_with(rng.normal(size=10))
    nc.backward(obj.squeeze_loss([g], 1.0))
    s = nc.stable_sigmoid(g.gamma.value)
    np.testing.assert_allclose(g.gamma.grad, s * (1 - s), rtol=1e-12)
    fd = numeric_grad(lambda: obj.squeeze_loss([g], 1.0), g.gamma)
    np.testing.assert_allclose(g.gamma.grad, fd, rtol=1e-6)


def test_squeeze_gradient_is_zero_below_budget_and_at_kink():
    g = gates_with(np.zeros(4))  # mass 2
    nc.backward(obj.squeeze_loss([g], 3.0))
    assert np.all(g.gamma.grad == 0)
    h = gates_with(np.zeros(4))
    nc.backward(obj.squeeze_loss([h], 2.0))
    assert np.all(h.gamma.grad == 0)


def test_squeeze_hinges_each_task_separately():
    over = gates_with(np.zeros(20), 0)   # mass 10
    under = gates_with(np.full(20, -9.0), 1)
    assert obj.squeeze_loss([over, under], 8.0).item() == pytest.approx(2.0)


@given(st.lists(st.floats(-6, 6), min_size=2, max_size=12), st.data())
def test_squeeze_non_increasing_under_single_decrease(values, data):
    budget = data.draw(st.floats(0, len(values)))
    k = data.draw(st.integers(0, len(values) - 1))
    step = data.draw(st.floats(0, 5))
    before = obj.squeeze_loss([gates_with(values)], budget).item()
    lowered = list(values)
    lowered[k] -= step
    after = obj.squeeze_loss([gates_with(lowered)], budget).item()
    assert after <= before + 1e-12
    assert after >= 0


@given(st.floats(0, 3), st.floats(0, 10), st.floats(0, 1))
def test_breakdown_identity(task, sq, lam):
    total = obj.train_loss(Variable([task]), Variable([sq]), lam).item()
    row = obj.LossBreakdown([task], task, sq, total, lam, 1.0).row()
    assert row["train_loss"] == task + lam * sq
    assert row["squeeze_loss"] >= 0


def test_default_budget():
    assert obj.default_budget(30) == 12.0
