"""
Tests for the autodiff engine, the GRU cell, Adam and the gradient checker.
"""

import math

import numpy as np
import pytest

from icred.errors import ContractError, DimensionError, DomainError, NumericalError
from icred.tensor import (
    Adam,
    AdamState,
    GruParams,
    Value,
    adam_step,
    backward,
    concat,
    exp,
    grad_check,
    gru_step,
    hconcat,
    log,
    log_softmax,
    make_tensor,
    matmul,
    max_columns,
    mean,
    nll,
    parameter,
    row,
    sigmoid,
    softmax,
    stack_columns,
    sum_squares,
    take_rows,
    tanh,
    vsum,
)

from tests.reference import scalar_gru_step


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# =============================================================================
# Tensors
# =============================================================================

def test_make_tensor_is_read_only():
    t = make_tensor([1.0, 2.0, 3.0, 4.0], shape=(2, 2))
    assert t.shape == (2, 2)
    assert t.dtype == np.float64
    with pytest.raises(ValueError):
        t[0, 0] = 5.0


def test_make_tensor_rejects_bad_input():
    with pytest.raises(NumericalError):
        make_tensor([1.0, np.nan])
    with pytest.raises(DimensionError):
        make_tensor([1.0, 2.0, 3.0], shape=(2, 2))
    with pytest.raises(DimensionError):
        make_tensor([], shape=(0,))


def test_forward_values():
    a = Value([1.0, -2.0])
    b = Value([3.0, 4.0])
    assert np.array_equal((a + b).data, [4.0, 2.0])
    assert np.array_equal((a * b).data, [3.0, -8.0])
    assert np.array_equal((a - b).data, [-2.0, -6.0])
    assert (a @ b).item() == pytest.approx(-5.0)
    assert np.allclose(softmax(b).data.sum(), 1.0)
    assert nll(b, 1).item() == pytest.approx(-log_softmax(b).data[1])


def test_shape_errors():
    with pytest.raises(DimensionError):
        matmul(Value(np.ones((2, 3))), Value(np.ones(2)))
    with pytest.raises(DimensionError):
        stack_columns([Value([1.0]), Value([1.0, 2.0])])
    with pytest.raises(DimensionError):
        nll(Value([0.0, 0.0]), 2)
    with pytest.raises(DomainError):
        log(Value([1.0, 0.0]))
    with pytest.raises(DomainError):
        mean([])


def test_softmax_known_values():
    assert np.allclose(softmax(Value([np.log(2.0), 0.0])).data, [2.0 / 3.0, 1.0 / 3.0], rtol=0, atol=1e-15)
    assert np.array_equal(softmax(Value([5.0])).data, [1.0])


def test_softmax_is_shift_invariant(rng):
    x = rng.normal(size=7)
    for c in (-50.0, 3.5, 700.0):
        assert np.allclose(softmax(Value(x + c)).data, softmax(Value(x)).data, rtol=0, atol=1e-12)


def test_softmax_matches_direct_formula(rng):
    x = rng.normal(scale=3.0, size=9)
    weights = [math.exp(v) for v in x]
    expected = [w / math.fsum(weights) for w in weights]
    assert np.allclose(softmax(Value(x)).data, expected, rtol=0, atol=1e-12)


def test_softmax_of_empty_vector():
    with pytest.raises(DomainError):
        softmax(Value(np.zeros(0)))


def test_non_finite_forward_raises():
    with pytest.raises(NumericalError):
        exp(Value([1000.0]))


def test_backward_needs_scalar():
    p = parameter([1.0, 2.0], "p")
    with pytest.raises(ContractError):
        backward(p * 2.0)


def test_shared_subexpression_gradient():
    """d(a*a)/da = 2a when the same node feeds both operands."""
    a = parameter([3.0, -1.0], "a")
    grads = backward(vsum(a * a))
    assert np.allclose(grads["a"], [6.0, -2.0])


def test_backward_accumulates_into_leaves():
    a = parameter([1.0, 2.0], "a")
    backward(vsum(a * 3.0))
    backward(vsum(a * 3.0))
    assert np.allclose(a.grad, [6.0, 6.0])
    a.zero_grad()
    assert np.array_equal(a.grad, [0.0, 0.0])


def test_backward_without_accumulate_leaves_grad_untouched():
    a = parameter([1.0, 2.0], "a")
    grads = backward(vsum(a), accumulate=False, seed=0.5)
    assert np.allclose(grads["a"], [0.5, 0.5])
    assert np.array_equal(a.grad, [0.0, 0.0])


def test_assign_only_on_leaves():
    a = parameter([1.0], "a")
    with pytest.raises(ContractError):
        (a * 2.0).assign([3.0])
    with pytest.raises(DimensionError):
        a.assign([1.0, 2.0])


def test_composite_gradients_match_finite_differences(rng):
    W = parameter(rng.normal(size=(3, 4)), "W")
    M = parameter(rng.normal(size=(4, 2)), "M")
    x = parameter(rng.normal(size=4), "x")
    E = parameter(rng.normal(size=(5, 4)), "E")

    def loss():
        h = tanh(matmul(W, x))
        g = sigmoid(matmul(W, concat([row(E, 1)])))
        scores = matmul(matmul(h, W), hconcat([M, stack_columns([x, row(E, 2)])]))
        pooled = max_columns(stack_columns([h, g]))
        words = take_rows(E, [0, 3, 3])
        terms = [nll(scores, 1), vsum(softmax(pooled) * log(exp(g))), sum_squares(words)]
        return mean(terms) + vsum(log_softmax(matmul(E, x)))

    report = grad_check(loss, {"W": W, "M": M, "x": x, "E": E})
    assert report.ok, report.flagged


def test_grad_check_flags_wrong_backward():
    p = parameter([0.3, -0.7], "p")

    def loss():
        doubled = Value.from_op(p.data * 1.0, (p,), "broken", lambda g: (2.0 * g,))
        return vsum(doubled)

    report = grad_check(loss, {"p": p})
    assert not report.ok
    assert {name for name, *_ in report.flagged} == {"p"}


def test_grad_check_rejects_nondeterministic_loss():
    p = parameter([1.0], "p")
    calls = iter(range(100))

    def loss():
        return vsum(p * float(next(calls)))

    with pytest.raises(ContractError):
        grad_check(loss, {"p": p})


# =============================================================================
# GRU
# =============================================================================

def _gru(rng, hidden=3, inputs=2):
    arrays = {name: rng.normal(scale=0.5, size=shape) for name, shape in GruParams.shapes(hidden, inputs).items()}
    return GruParams.from_arrays("cell", arrays), arrays


def test_gru_step_matches_scalar_loops(rng):
    cell, arrays = _gru(rng)
    h = rng.normal(size=3)
    x = rng.normal(size=2)
    out = gru_step(cell, Value(h), Value(x)).data

    W = {g: arrays[f"W_{g}"].tolist() for g in "zrh"}
    U = {g: arrays[f"U_{g}"].tolist() for g in "zrh"}
    b = {g: arrays[f"b_{g}"].tolist() for g in "zrh"}
    expected = scalar_gru_step(W, U, b, h.tolist(), x.tolist())
    assert np.allclose(out, expected, rtol=0, atol=1e-12)


def test_gru_step_gradients(rng):
    cell, _ = _gru(rng)
    h0 = parameter(rng.normal(size=3), "h0")
    xs = [parameter(rng.normal(size=2), f"x{i}") for i in range(3)]

    def loss():
        h = h0
        for x in xs:
            h = gru_step(cell, h, x)
        return vsum(h * h)

    params = {"h0": h0, **{x.name: x for x in xs}, **{f"cell.{n}": v for n, v in cell.named()}}
    report = grad_check(loss, params)
    assert report.ok, report.flagged


def test_gru_with_zero_weights_halves_the_state(rng):
    cell = GruParams.from_arrays("cell", {name: np.zeros(shape) for name, shape in GruParams.shapes(3, 2).items()})
    h = rng.normal(size=3)
    out = gru_step(cell, Value(h), Value(rng.normal(size=2))).data
    assert np.allclose(out, 0.5 * h, rtol=0, atol=1e-15)


def test_gru_shape_checks(rng):
    cell, _ = _gru(rng)
    with pytest.raises(DimensionError):
        gru_step(cell, Value(np.zeros(3)), Value(np.zeros(3)))
    with pytest.raises(DimensionError):
        gru_step(cell, Value(np.zeros(2)), Value(np.zeros(2)))


def test_gru_initialize_zero_biases(rng):
    cell = GruParams.initialize("enc", hidden=4, inputs=9, rng=rng)
    assert cell.hidden_size == 4 and cell.input_size == 9
    assert not cell.b_z.data.any() and not cell.b_h.data.any()
    assert np.abs(cell.W_z.data).max() <= 1.0 / 3.0
    assert cell.W_z.name == "enc.W_z"


# =============================================================================
# Adam
# =============================================================================

def test_adam_first_step_moves_by_lr():
    param = np.array([1.0, -1.0, 0.5])
    grad = np.array([0.2, -3.0, 0.0])
    state = AdamState.zeros_like(param, lr=0.1)
    new_param, new_state = adam_step(state, param, grad)

    assert np.allclose(new_param, [0.9, -0.9, 0.5])
    assert new_state.step == 1
    assert state.step == 0 and not state.m.any()


def test_adam_matches_reference_over_steps(rng):
    param = rng.normal(size=4)
    state = AdamState.zeros_like(param, lr=0.01, beta1=0.8, beta2=0.9)
    m = np.zeros(4)
    v = np.zeros(4)
    expected = param.copy()
    for t in range(1, 6):
        g = rng.normal(size=4)
        param, state = adam_step(state, param, g)
        m = 0.8 * m + 0.2 * g
        v = 0.9 * v + 0.1 * g * g
        expected = expected - 0.01 * (m / (1 - 0.8 ** t)) / (np.sqrt(v / (1 - 0.9 ** t)) + 1e-8)
    assert np.allclose(param, expected, rtol=0, atol=1e-12)


def test_adam_zero_gradient_leaves_parameters_bit_identical(rng):
    param = rng.normal(size=(3, 2))
    new_param, _ = adam_step(AdamState.zeros_like(param, lr=0.5), param, np.zeros_like(param))
    assert np.array_equal(new_param, param)

    p = parameter(param, "p")
    opt = Adam({"p": p}, lr=0.5)
    opt.step()
    assert np.array_equal(p.data, param)


def test_adam_shape_mismatch():
    state = AdamState.zeros_like(np.zeros(2))
    with pytest.raises(DimensionError):
        adam_step(state, np.zeros(2), np.zeros(3))


def test_adam_optimizer_rebinds_and_restores(rng):
    p = parameter(rng.normal(size=(2, 2)), "p")
    before = p.data
    opt = Adam({"p": p}, lr=0.05)
    backward(sum_squares(p))
    opt.step()
    assert opt.states["p"].step == 1
    assert not np.array_equal(p.data, before)
    assert not p.data.flags.writeable

    arrays = opt.state_arrays()
    assert set(arrays) == {"adam.m.p", "adam.v.p"}
    restored = Adam({"p": p}, lr=0.05)
    restored.load_state(arrays, step=1)
    assert restored.states["p"].step == 1
    assert np.array_equal(restored.states["p"].m, opt.states["p"].m)
