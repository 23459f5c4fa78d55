import numpy as np
import pytest

from terradyn.errors import TapeOverflowError
from terradyn.tape import Tape, TapeOps, Tensor


def test_quadratic_gradient_exact():
    tape = Tape()
    c = np.array([0.3, -1.2, 2.0])
    x = tape.leaf(np.array([1.0, 2.0, 3.0]))
    y = (x - c) * (x - c)
    tape.backward(y)  # ones seed == gradient of the sum
    np.testing.assert_allclose(x.grad, 2.0 * (x.value - c), atol=1e-15)


def test_chain_through_nonlinearities():
    ops = TapeOps(Tape())
    x = ops.tape.leaf(np.array([0.7]))
    y = ops.sigmoid(ops.sqrt(x * x * x))
    ops.tape.backward(y)
    # analytic: d sigmoid(t)/dt * d x^{3/2}/dx
    t = 0.7 ** 1.5
    sig = 1.0 / (1.0 + np.exp(-t))
    expect = sig * (1 - sig) * 1.5 * np.sqrt(0.7)
    assert x.grad[0] == pytest.approx(expect, rel=1e-12)


def test_relu_and_clip_subgradients():
    ops = TapeOps(Tape())
    x = ops.tape.leaf(np.array([-1.0, 0.5, 2.0]))
    y = ops.relu(x) + ops.clip01(x)
    ops.tape.backward(y)
    np.testing.assert_array_equal(x.grad, [0.0, 2.0, 1.0])


def test_take_scatter_adjoint():
    ops = TapeOps(Tape())
    h = ops.tape.leaf(np.arange(6, dtype=np.float64))
    idx = np.array([1, 1, 4])
    y = ops.take(h, idx) * np.array([2.0, 3.0, 5.0])
    ops.tape.backward(y)
    np.testing.assert_array_equal(h.grad, [0.0, 5.0, 0.0, 0.0, 5.0, 0.0])


def test_broadcast_unreduction():
    tape = Tape()
    a = tape.leaf(np.ones((1, 1)))
    b = tape.leaf(np.ones((2, 3)))
    tape.backward(a * b)
    assert a.grad.shape == (1, 1)
    assert a.grad[0, 0] == 6.0


def test_ndarray_left_operand_returns_tensor():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    out = np.array([1.0, 2.0, 3.0]) * x
    assert isinstance(out, Tensor)
    tape.backward(out)
    np.testing.assert_array_equal(x.grad, [1.0, 2.0, 3.0])


def test_repeated_backward_bit_identical():
    def run():
        tape = Tape()
        x = tape.leaf(np.linspace(0.1, 1.0, 10))
        ops = TapeOps(tape)
        y = ops.sigmoid(x * x) * ops.sqrt(x)
        tape.backward(y)
        return x.grad.copy()

    g1, g2 = run(), run()
    np.testing.assert_array_equal(g1, g2)


def test_node_budget_overflow():
    tape = Tape(node_budget=10)
    x = tape.leaf(np.ones(4))
    with pytest.raises(TapeOverflowError):
        for _ in range(20):
            x = x * x
