import math

import numpy as np
import pytest

from src.core.errors import ContractViolation, InvalidShapeError
from src.core.tensor import (
    Parameter, Tape, Tensor, backward, clamp, detach, dropout, embedding, exp, getitem, grad_check,
    log, log_softmax, matmul, nll_categorical, nll_multilabel, relu, sigmoid, softmax, sq_distance,
    tanh, tsum,
)

TOL = 1e-4
FLOOR = 1e-6


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return tsum(out * Tensor(w))


UNARY = {
    "exp": lambda a: exp(a),
    "log": lambda a: log(a),
    "tanh": lambda a: tanh(a),
    "sigmoid": lambda a: sigmoid(a),
    "relu": lambda a: relu(a),
    "clamp": lambda a: clamp(a, -0.5, 0.5),
    "softmax": lambda a: softmax(a),
    "log_softmax": lambda a: log_softmax(a),
    "neg": lambda a: -a,
    "getitem": lambda a: getitem(a, (slice(0, 2), slice(1, 3))),
    "reshape": lambda a: a.reshape(4, 3),
}

BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
}


@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("seed", range(100))
def test_unary_ops_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(3, 4))
    if name == "log":
        data = np.abs(data) + 0.5
    # keep finite-difference points off the relu / clamp kinks
    for kink in (0.0, 0.5, -0.5):
        near = np.abs(data - kink) < 0.01
        data[near] += 0.05
    a = Parameter("a", data)
    out_shape = UNARY[name](Tensor(data)).shape
    w = rng.normal(size=out_shape)
    err = grad_check(lambda: _weighted(UNARY[name](a), w), [a], floor=FLOOR)
    assert err < TOL


@pytest.mark.parametrize("name", sorted(BINARY))
@pytest.mark.parametrize("seed", range(100))
def test_broadcasting_binary_ops_match_finite_differences(name, seed):
    rng = np.random.default_rng(100 + seed)
    a = Parameter("a", rng.normal(size=(3, 4)))
    b_data = rng.normal(size=(4,))
    if name == "div":
        b_data = np.sign(b_data) * (np.abs(b_data) + 0.5)
    b = Parameter("b", b_data)
    w = rng.normal(size=(3, 4))
    err = grad_check(lambda: _weighted(BINARY[name](a, b), w), [a, b], floor=FLOOR)
    assert err < TOL
    assert b.grad.shape == (4,)


@pytest.mark.parametrize("seed", range(100))
@pytest.mark.parametrize("shapes", [((3, 4), (4, 2)), ((4,), (4, 2)), ((3, 4), (4,)), ((4,), (4,))])
def test_matmul_gradients(seed, shapes):
    rng = np.random.default_rng(200 + seed)
    a = Parameter("a", rng.normal(size=shapes[0]))
    b = Parameter("b", rng.normal(size=shapes[1]))
    out_shape = np.zeros(shapes[0]) @ np.zeros(shapes[1])
    w = rng.normal(size=np.shape(out_shape))
    err = grad_check(lambda: _weighted(matmul(a, b), w), [a, b], floor=FLOOR)
    assert err < TOL


@pytest.mark.parametrize("seed", range(100))
def test_reductions_embedding_and_distance_gradients(seed):
    rng = np.random.default_rng(300 + seed)
    table = Parameter("table", rng.normal(size=(5, 3)))
    other = Parameter("other", rng.normal(size=(4, 3)))
    ids = np.array([1, 1, 4, 0])
    w = rng.normal(size=4)

    def fn():
        rows = embedding(table, ids)
        return tsum(sq_distance(rows, other) * Tensor(w)) + tsum(tsum(rows, axis=0) * 0.5)

    assert grad_check(fn, [table, other], floor=FLOOR) < TOL


@pytest.mark.parametrize("seed", range(100))
def test_losses_gradients(seed):
    rng = np.random.default_rng(400 + seed)
    logits = Parameter("logits", rng.normal(size=(3, 5)))
    single = Parameter("single", rng.normal(size=5))
    probs_in = Parameter("probs_in", rng.normal(size=(3, 2)))
    y = rng.integers(5, size=3)
    z = rng.integers(2, size=(3, 2))

    def fn():
        return (nll_categorical(logits, y) + nll_categorical(single, int(y[0]))
                + nll_multilabel(sigmoid(probs_in), z))

    assert grad_check(fn, [logits, single, probs_in], floor=FLOOR) < TOL


def test_backward_accumulates_known_values():
    x = Parameter("x", np.array([2.0, -1.0]))
    y = Parameter("y", np.array([3.0, 4.0]))
    with Tape() as tape:
        loss = tsum(x * y + x * x)
    grads = backward(tape, loss, [x, y])
    np.testing.assert_allclose(grads["x"], [3.0 + 4.0, 4.0 - 2.0])
    np.testing.assert_allclose(grads["y"], [2.0, -1.0])


def test_ops_outside_a_tape_record_nothing():
    x = Parameter("x", np.ones(3))
    out = tsum(x * 2.0)
    assert not out.requires_grad
    with Tape() as tape:
        out = tsum(x * 2.0)
    assert out.requires_grad and len(tape) == 2


def test_detach_blocks_gradient():
    x = Parameter("x", np.ones(3))
    with Tape() as tape:
        loss = tsum(detach(x * 3.0) * x)
    backward(tape, loss)
    np.testing.assert_allclose(x.grad, [3.0, 3.0, 3.0])


def test_backward_needs_a_scalar():
    x = Parameter("x", np.ones(3))
    with Tape() as tape:
        out = x * 2.0
    with pytest.raises(ContractViolation):
        backward(tape, out)


def test_item_needs_a_single_element():
    assert Tensor(np.array([[2.5]])).item() == 2.5
    with pytest.raises(InvalidShapeError):
        Tensor(np.ones(3)).item()


def test_grad_check_rejects_stochastic_functions():
    x = Parameter("x", np.ones((2, 3)))
    rng = np.random.default_rng(0)
    with pytest.raises(ContractViolation):
        grad_check(lambda: tsum(dropout(x, 0.5, rng, train=True)), [x])


def test_dropout_is_identity_at_eval_and_scales_at_train():
    x = Tensor(np.ones((200, 50)))
    assert dropout(x, 0.3, None, train=False) is x
    out = dropout(x, 0.5, np.random.default_rng(1), train=True).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert abs(out.mean() - 1.0) < 0.05
    with pytest.raises(ContractViolation):
        dropout(x, 0.5, None, train=True)


def test_categorical_nll_values_and_errors():
    assert nll_categorical(Tensor(np.zeros(4)), 2).item() == pytest.approx(math.log(4), abs=1e-12)
    batch = Tensor(np.zeros((3, 2)))
    assert nll_categorical(batch, [0, 1, 1]).item() == pytest.approx(3 * math.log(2), abs=1e-12)
    with pytest.raises(IndexError):
        nll_categorical(Tensor(np.zeros(4)), 4)
    with pytest.raises(InvalidShapeError):
        nll_categorical(Tensor(np.zeros(0)), 0)


def test_multilabel_nll_values_and_clamping():
    p = Tensor(np.array([0.5, 0.5]))
    assert nll_multilabel(p, [1, 0]).item() == pytest.approx(2 * math.log(2), abs=1e-12)
    extreme = nll_multilabel(Tensor(np.array([0.0, 1.0])), [1, 0]).item()
    assert math.isfinite(extreme) and extreme == pytest.approx(-2 * math.log(1e-7), rel=1e-6)
    with pytest.raises(InvalidShapeError):
        nll_multilabel(p, [1, 0, 1])


def test_softmax_rows_sum_to_one_and_reject_empty():
    out = softmax(Tensor(np.array([[1000.0, 0.0, -1000.0], [1.0, 2.0, 3.0]]))).data
    np.testing.assert_allclose(out.sum(axis=-1), [1.0, 1.0])
    with pytest.raises(InvalidShapeError):
        softmax(Tensor(np.zeros(0)))
    with pytest.raises(InvalidShapeError):
        log_softmax(Tensor(np.zeros((2, 0))))


def test_matmul_rejects_bad_shapes():
    with pytest.raises(InvalidShapeError):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(InvalidShapeError):
        matmul(Tensor(np.zeros((2, 2, 2))), Tensor(np.zeros((2, 2))))


def test_embedding_accumulates_repeated_ids():
    table = Parameter("table", np.zeros((4, 2)))
    with Tape() as tape:
        loss = tsum(embedding(table, [1, 1, 3]))
    backward(tape, loss)
    np.testing.assert_allclose(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])
    with pytest.raises(IndexError):
        embedding(table, [4])


def test_analytic_values():
    np.testing.assert_allclose(softmax(Tensor(np.array([math.log(2), 0.0]))).data, [2 / 3, 1 / 3], atol=1e-12)
    assert sigmoid(Tensor(np.array(math.log(3)))).item() == pytest.approx(0.75, abs=1e-12)
    expected = -(3.0 - math.log(math.exp(1) + math.exp(2) + math.exp(3)))
    assert nll_categorical(Tensor(np.array([1.0, 2.0, 3.0])), 2).item() == pytest.approx(expected, abs=1e-12)
    value = nll_multilabel(Tensor(np.array([0.9, 0.2])), [1, 0]).item()
    assert value == pytest.approx(-math.log(0.9) - math.log(0.8), abs=1e-12)


def test_softmax_nll_gradient_is_probs_minus_onehot():
    logits = Parameter("logits", np.array([0.3, -1.2, 2.0]))
    with Tape() as tape:
        loss = nll_categorical(logits, 1)
    backward(tape, loss)
    probs = np.exp(logits.data) / np.exp(logits.data).sum()
    np.testing.assert_allclose(logits.grad, probs - np.array([0.0, 1.0, 0.0]), atol=1e-12)

    x = Parameter("x", np.zeros(1))
    with Tape() as tape:
        out = tsum(sigmoid(x))
    backward(tape, out)
    assert x.grad[0] == pytest.approx(0.25, abs=1e-12)


def test_unreachable_parameter_gets_zero_gradient():
    used = Parameter("used", np.ones(2))
    unused = Parameter("unused", np.full(3, 7.0))
    with Tape() as tape:
        loss = tsum(used * used)
    grads = backward(tape, loss, [used, unused])
    np.testing.assert_array_equal(grads["unused"], np.zeros(3))
