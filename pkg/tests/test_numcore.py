import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dagmtl import numcore as nc
from dagmtl.numcore import Variable

from helpers import check_grads


def away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


# one builder per differentiable op: (rng) -> (loss closure, variables)
def case_affine(rng):
    x, w, b = (Variable(rng.normal(size=s)) for s in [(4, 3), (3, 5), (5,)])
    r = rng.normal(size=(4, 5))
    return lambda: nc.sum_all(nc.mul(nc.affine(x, w, b), Variable(r))), [x, w, b]


def case_relu(rng):
    x = Variable(away_from_zero(rng, (3, 4)))
    r = rng.normal(size=(3, 4))
    return lambda: nc.sum_all(nc.mul(nc.relu(x), Variable(r))), [x]


def case_sigmoid(rng):
    x = Variable(rng.normal(scale=3, size=(5,)))
    r = rng.normal(size=5)
    return lambda: nc.sum_all(nc.mul(nc.sigmoid(x), Variable(r))), [x]


def case_scalar_mul(rng):
    x = Variable(rng.normal(size=(2, 3)))
    c = float(rng.normal())
    r = rng.normal(size=(2, 3))
    return lambda: nc.sum_all(nc.mul(nc.scalar_mul(x, c), Variable(r))), [x]


def case_add_broadcast(rng):
    a, b = Variable(rng.normal(size=(3, 4))), Variable(rng.normal(size=(4,)))
    r = rng.normal(size=(3, 4))
    return lambda: nc.sum_all(nc.mul(nc.add(a, b), Variable(r))), [a, b]


def case_add_scalar(rng):
    x = Variable(rng.normal(size=(4,)))
    r = rng.normal(size=4)
    return lambda: nc.sum_all(nc.mul(nc.add_scalar(x, 1.5), Variable(r))), [x]


def case_add_n(rng):
    xs = [Variable(rng.normal(size=(2, 2))) for _ in range(3)]
    r = rng.normal(size=(2, 2))
    return lambda: nc.sum_all(nc.mul(nc.add_n(xs), Variable(r))), xs


def case_mul(rng):
    a, b = Variable(rng.normal(size=(3, 2))), Variable(rng.normal(size=(3, 2)))
    return lambda: nc.sum_all(nc.mul(a, b)), [a, b]


def case_take(rng):
    x = Variable(rng.normal(size=(5,)))
    return lambda: nc.mul(nc.take(x, 2), nc.take(x, 4)), [x]


def case_gated_sum(rng):
    xs = [Variable(rng.normal(size=(3, 2))) for _ in range(3)]
    g = Variable(rng.normal(size=(4,)))
    r = rng.normal(size=(3, 2))
    return (lambda: nc.sum_all(nc.mul(nc.gated_sum(xs, g, [0, 2, 2], 0.4), Variable(r))),
            xs + [g])


def case_mean(rng):
    x = Variable(rng.normal(size=(3, 3)))
    return lambda: nc.mean(nc.mul(x, x)), [x]


def case_cross_entropy(rng):
    logits = Variable(rng.normal(size=(6, 4)))
    labels = rng.integers(0, 4, size=6)
    return lambda: nc.softmax_cross_entropy(logits, labels), [logits]


def case_l2(rng):
    pred = Variable(rng.normal(size=(5, 2)))
    target = rng.normal(size=(5, 2))
    return lambda: nc.l2_loss(pred, target), [pred]


CASES = [case_affine, case_relu, case_sigmoid, case_scalar_mul, case_add_broadcast,
         case_add_scalar, case_add_n, case_mul, case_take, case_gated_sum, case_mean,
         case_cross_entropy, case_l2]


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("case", CASES, ids=lambda c: c.__name__[5:])
def test_gradients_match_finite_differences(case, seed):
    f, variables = case(np.random.default_rng(seed))
    assert check_grads(f, variables) < 1e-4


def test_forward_examples():
    assert nc.sigmoid(Variable([0.0])).item() == 0.5
    np.testing.assert_array_equal(nc.relu(Variable([-3.0, 2.0])).value, [0.0, 2.0])
    assert nc.l2_loss(Variable([1.0, 2.0]), [1.0, 2.0]).item() == 0.0


def test_sigmoid_derivative_at_zero():
    x = Variable([0.0])
    nc.backward(nc.sigmoid(x))
    assert x.grad[0] == 0.25


def test_l2_on_2x2_system_matches_finite_differences():
    rng = np.random.default_rng(3)
    w = Variable(rng.normal(size=(2, 2)))
    x = Variable(rng.normal(size=(1, 2)))
    y = rng.normal(size=(1, 2))
    f = lambda: nc.l2_loss(nc.affine(x, w, Variable(np.zeros(2))), y)
    assert check_grads(f, [w]) < 1e-5


def test_unused_variable_gradient_is_exactly_zero():
    x, unused = Variable([1.0, 2.0]), Variable([3.0])
    nc.backward(nc.sum_all(nc.mul(x, x)))
    assert np.all(unused.grad == 0)


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ValueError, match=r"affine.*\(2, 3\).*\(4, 5\)"):
        nc.affine(Variable(np.ones((2, 3))), Variable(np.ones((4, 5))), Variable(np.ones(5)))
    with pytest.raises(ValueError, match="add"):
        nc.add(Variable(np.ones(3)), Variable(np.ones(4)))
    with pytest.raises(ValueError, match="l2_loss"):
        nc.l2_loss(Variable(np.ones(3)), np.ones(2))


def test_non_scalar_loss_rejected():
    with pytest.raises(ValueError, match="scalar"):
        nc.backward(Variable(np.ones(3)) + Variable(np.ones(3)))


def test_non_finite_output_rejected():
    with pytest.raises(FloatingPointError), np.errstate(over="ignore"):
        nc.scalar_mul(Variable([1e308]), 1e10)


def test_cross_entropy_uniform_logits_is_log_c():
    loss = nc.softmax_cross_entropy(Variable(np.zeros((3, 5))), [0, 1, 4])
    assert loss.item() == pytest.approx(np.log(5), abs=1e-12)


def test_backward_is_deterministic():
    def run():
        rng = np.random.default_rng(11)
        f, vs = case_affine(rng)
        nc.backward(f())
        return [v.grad.copy() for v in vs]

    for a, b in zip(run(), run()):
        assert np.array_equal(a, b)


def test_zero_grad_then_backward_equals_fresh_tape():
    rng = np.random.default_rng(5)
    f, vs = case_gated_sum(rng)
    nc.backward(f())
    nc.backward(f())
    nc.zero_grad(vs)
    assert all(np.all(v.grad == 0) for v in vs)
    nc.backward(f())
    once = [v.grad.copy() for v in vs]
    nc.zero_grad(vs)
    nc.backward(f())
    for a, v in zip(once, vs):
        assert np.array_equal(a, v.grad)


# ------------------------------------------------------------------ Adam

def test_adam_first_step_closed_form():
    x = Variable([1.0], trainable=True)
    opt = nc.Adam([x], lr=0.1)
    x.grad = np.array([1.0])
    opt.step()
    # m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
    assert x.value[0] == pytest.approx(1.0 - 0.1 / (1 + 1e-8), abs=1e-15)
    assert opt.t == 1
    assert x.grad[0] == 1.0


def test_adam_zero_gradient_is_a_no_op():
    x = Variable([0.7, -2.0], trainable=True)
    opt = nc.Adam([x], lr=0.1)
    opt.step()
    np.testing.assert_array_equal(x.value, [0.7, -2.0])


def test_adam_minimises_quadratic():
    x = Variable([1.0], trainable=True)
    opt = nc.Adam([x], lr=0.01)
    for _ in range(2000):
        opt.zero_grad()
        nc.backward(nc.sum_all(nc.mul(x, x)))
        opt.step()
    assert abs(x.value[0]) < 1e-2


def test_adam_step_count_and_buffer_shapes():
    vs = [Variable(np.zeros((2, 3)), True), Variable(np.zeros(4), True)]
    opt = nc.Adam(vs)
    for t in range(1, 4):
        opt.step()
        assert opt.t == t
    assert [m.shape for m in opt.m] == [(2, 3), (4,)]
    assert [v.shape for v in opt.v] == [(2, 3), (4,)]


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.floats(1e-4, 0.5))
def test_adam_first_step_moves_each_coordinate_by_lr(grads, lr):
    g = np.array(grads)
    x = Variable(np.zeros_like(g), trainable=True)
    x.grad = g.copy()
    nc.Adam([x], lr=lr).step()
    expected = -lr * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(x.value, expected, rtol=1e-9, atol=1e-12)


@given(st.integers(0, 10_000))
def test_gradient_shape_matches_value_shape(seed):
    rng = np.random.default_rng(seed)
    f, vs = case_affine(rng)
    nc.backward(f())
    assert all(v.grad.shape == v.value.shape for v in vs)
