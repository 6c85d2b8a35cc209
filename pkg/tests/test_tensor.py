import numpy as np
import pytest

from services import tensor as T
from services.tensor import GradTape, Tensor, finite_diff_grad
from utils.errors import DomainError, NumericError, ShapeError


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


def check_gradient(fn, x: np.ndarray, tolerance: float = 1e-5):
    # Step 1: analytic gradient from the tape
    tape = GradTape()
    leaf = tape.watch(x)
    T.backward(fn(leaf), tape)

    # Step 2: central differences on an untracked copy
    numeric = finite_diff_grad(fn, x).values
    error = relative_error(leaf.grad, numeric)
    assert error < tolerance, f"gradient mismatch, relative error {error:.3g}"


@pytest.mark.parametrize(
    "name, fn",
    [
        ("add", lambda x: T.reduce_sum(T.add(x, T.mul(x, x)))),
        ("sub_scalar", lambda x: T.reduce_sum(T.sub(2.0, x))),
        ("exp", lambda x: T.reduce_sum(T.exp(x))),
        ("log", lambda x: T.reduce_sum(T.log(T.add(T.exp(x), 1.0)))),
        ("log_sigmoid", lambda x: T.reduce_sum(T.log_sigmoid(x))),
        ("log_softmax", lambda x: T.reduce_sum(T.mul(T.log_softmax(x), np.arange(12.0).reshape(3, 4)))),
        ("softmax", lambda x: T.reduce_sum(T.mul(T.softmax(x), np.arange(12.0).reshape(3, 4)))),
        ("relu", lambda x: T.reduce_sum(T.mul(T.relu(x), x))),
        ("mean_axis", lambda x: T.reduce_sum(T.mul(T.reduce_mean(x, axis=0), T.reduce_mean(x, axis=0)))),
        ("transpose", lambda x: T.reduce_sum(T.mul(T.transpose(x, (1, 0)), np.arange(12.0).reshape(4, 3)))),
        ("reshape", lambda x: T.reduce_sum(T.mul(T.reshape(x, (2, 6)), np.arange(12.0).reshape(2, 6)))),
        ("gather", lambda x: T.reduce_sum(T.gather_last(T.log_softmax(x), np.array([0, 3, 1])))),
        ("matmul", lambda x: T.reduce_sum(T.matmul(x, T.transpose(x, (1, 0))))),
    ],
)
def test_elementwise_and_reduction_gradients(name, fn):
    x = np.random.default_rng(0).normal(size=(3, 4))
    # keep relu away from its kink
    x[np.abs(x) < 1e-3] = 0.5
    check_gradient(fn, x)


def test_batched_matmul_gradients():
    rng = np.random.default_rng(1)
    weight = rng.normal(size=(4, 5))
    other = rng.normal(size=(2, 5, 3))

    # Step 1: shared weight across a batch
    check_gradient(lambda x: T.reduce_sum(T.mul(T.matmul(x, weight), 0.3)), rng.normal(size=(2, 3, 4)))

    # Step 2: batched operands on both sides
    check_gradient(lambda x: T.reduce_sum(T.matmul(T.matmul(x, weight), other)), rng.normal(size=(2, 3, 4)))


def test_layer_norm_gradients():
    rng = np.random.default_rng(2)
    gain = rng.normal(size=5)
    bias = rng.normal(size=5)
    weights = rng.normal(size=(2, 3, 5))
    check_gradient(lambda x: T.reduce_sum(T.mul(T.layer_norm(x, gain, bias), weights)), rng.normal(size=(2, 3, 5)))


def test_embedding_scatter_adds_repeated_rows():
    table = np.arange(12.0).reshape(4, 3)
    tape = GradTape()
    leaf = tape.watch(table)
    T.backward(T.reduce_sum(T.embedding(leaf, np.array([[1, 1], [2, 0]]))), tape)

    expected = np.array([[1.0] * 3, [2.0] * 3, [1.0] * 3, [0.0] * 3])
    assert np.array_equal(leaf.grad, expected), f"unexpected embedding gradient {leaf.grad}"


def test_clamp_min_blocks_gradient_where_clamped():
    tape = GradTape()
    leaf = tape.watch(np.array([0.5, 1e-40, 2.0]))
    T.backward(T.reduce_sum(T.clamp_min(leaf, 1e-30)), tape)
    assert np.array_equal(leaf.grad, [1.0, 0.0, 1.0]), f"clamped entry still has gradient: {leaf.grad}"


def test_backward_accumulates_over_shared_inputs():
    tape = GradTape()
    x = tape.watch(np.array([3.0]))
    unused = tape.watch(np.array([1.0, 2.0]))
    T.backward(T.mul(x, x), tape)
    assert np.allclose(x.grad, [6.0]), f"d(x*x)/dx should be 2x, got {x.grad}"
    assert np.array_equal(unused.grad, [0.0, 0.0]), "leaves outside the graph must get zero gradients"


def test_broadcasting_rules():
    a = Tensor(np.ones((2, 3, 4)))

    # Step 1: trailing suffix and scalars are accepted
    assert T.add(a, np.ones(4)).shape == (2, 3, 4)
    assert T.mul(a, 2.0).shape == (2, 3, 4)

    # Step 2: anything else is a shape error
    with pytest.raises(ShapeError):
        T.add(a, np.ones((3, 1)))
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_domain_errors():
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        T.gather_last(Tensor(np.zeros((2, 3))), np.array([0, 3]))
    with pytest.raises(ValueError):
        # DomainError is also a ValueError
        T.embedding(Tensor(np.zeros((2, 2))), np.array([5]))


def test_non_scalar_backward_and_mixed_tapes_are_rejected():
    tape = GradTape()
    x = tape.watch(np.ones(3))
    with pytest.raises(ShapeError):
        T.backward(T.mul(x, 2.0), tape)

    other = GradTape().watch(np.ones(3))
    with pytest.raises(NumericError):
        T.add(x, other)


def test_non_finite_results_raise():
    with pytest.raises(NumericError):
        T.exp(Tensor([1000.0]))


def test_log_sigmoid_is_stable_for_large_inputs():
    values = T.log_sigmoid_values(np.array([-800.0, 0.0, 800.0]))
    assert np.all(np.isfinite(values)), f"log sigmoid overflowed: {values}"
    assert values[1] == pytest.approx(np.log(0.5))
    assert values[2] == 0.0


def test_log_softmax_rows_normalize_and_ignore_shifts():
    rng = np.random.default_rng(5)
    x = rng.normal(0.0, 10.0, size=(20, 9))
    result = T.log_softmax(Tensor(x)).values
    sums = np.exp(result).sum(axis=-1)
    assert np.max(np.abs(sums - 1.0)) <= 1e-12, f"rows sum to {sums}"
    shifted = T.log_softmax(Tensor(x + rng.normal(0.0, 50.0, size=(20, 1)))).values
    assert np.allclose(shifted, result, atol=1e-9)
    assert np.allclose(T.log_softmax_values(np.array([3.5, 1.0])), T.log_softmax_values(np.array([2.5, 0.0])), atol=1e-12)
