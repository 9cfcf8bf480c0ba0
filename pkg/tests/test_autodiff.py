"""Reverse-mode engine: forward values, gradients, and record semantics."""

from __future__ import annotations

import numpy as np
import pytest

import molham.autodiff as ad
from molham.autodiff import Tape, constant, grad_check
from molham.errors import NonFiniteValue, ShapeMismatch

RNG = np.random.default_rng(20240617)


def test_constants_are_not_recorded():
    a = constant(np.ones((2, 2)))
    b = constant(np.ones((2, 2)))
    out = ad.sum_(a @ b + a)
    assert out.tape is None and out.node is None


def test_backward_without_leaves_is_noop():
    out = ad.sum_(ad.tanh(constant(RNG.standard_normal((3, 3)))))
    assert out.grad is None


def test_leaf_gradient_basic():
    tape = Tape()
    x = tape.leaf(np.array([[1.0, 2.0], [3.0, 4.0]]))
    out = ad.sum_(ad.square(x))
    tape.backward(out)
    assert np.allclose(x.grad, 2.0 * x.data)


def test_backward_requires_scalar():
    tape = Tape()
    x = tape.leaf(np.ones((2, 2)))
    with pytest.raises(ShapeMismatch):
        tape.backward(x + 1.0)


def test_mixed_tapes_rejected():
    t1, t2 = Tape(), Tape()
    a = t1.leaf(np.ones((2, 2)))
    b = t2.leaf(np.ones((2, 2)))
    with pytest.raises(ShapeMismatch):
        _ = a + b


def test_shared_subexpression_accumulates():
    tape = Tape()
    x = tape.leaf(np.array([[2.0]]))
    out = ad.sum_(x * x + x)  # d/dx = 2x + 1
    tape.backward(out)
    assert np.allclose(x.grad, [[5.0]])


def test_row_softmax_values():
    out = ad.row_softmax(constant(np.array([[0.0, 0.0]])))
    assert np.allclose(out.data, [[0.5, 0.5]])
    rows = ad.row_softmax(constant(RNG.standard_normal((30, 7)))).data
    assert np.max(np.abs(rows.sum(axis=1) - 1.0)) < 1e-12
    assert np.all((rows > 0.0) & (rows < 1.0))


def test_smooth_l1_identity_case():
    tape = Tape()
    x = tape.leaf(RNG.standard_normal((4, 4)))
    out = ad.sum_(ad.smooth_l1(x, constant(x.data.copy())))
    assert out.item() == 0.0
    tape.backward(out)
    assert np.all(x.grad == 0.0)


def test_smooth_l1_regions():
    a = constant(np.array([[0.4, 3.0]]))
    b = constant(np.array([[0.0, 0.0]]))
    out = ad.smooth_l1(a, b).data
    assert np.allclose(out, [[0.5 * 0.16, 2.5]])


def test_cosine_rows_self_similarity():
    u = RNG.standard_normal((5, 6))
    out = ad.cosine_rows(constant(u), constant(u.copy()))
    assert np.allclose(out.data, 1.0)


def test_matmul_shape_errors():
    with pytest.raises(ShapeMismatch):
        ad.matmul(constant(np.ones((2, 3))), constant(np.ones((2, 3))))
    with pytest.raises(ShapeMismatch):
        ad.matmul(constant(np.ones(3)), constant(np.ones((3, 2))))


def test_gather_and_concat():
    tape = Tape()
    x = tape.leaf(RNG.standard_normal((5, 3)))
    idx = np.array([4, 0, 0, 2], dtype=np.intp)
    g = ad.gather_rows(x, idx)
    assert np.array_equal(g.data, x.data[idx])
    top = ad.concat_rows([g, x])
    out = ad.sum_(ad.square(top))
    tape.backward(out)
    expected = 2.0 * x.data.copy()
    np.add.at(expected, idx, 2.0 * x.data[idx])
    assert np.allclose(x.grad, expected)


# --- gradient checks for every primitive in isolation ---

_C34 = RNG.standard_normal((3, 4))
_C42 = RNG.standard_normal((4, 2))
_C31 = RNG.standard_normal((3, 1))
_C32 = RNG.standard_normal((3, 2))
_C43 = RNG.standard_normal((4, 3))
_IDX = np.array([2, 0, 1, 2], dtype=np.intp)

PRIMITIVES = {
    "add": lambda x: ad.sum_(x + constant(_C34)),
    "add_broadcast": lambda x: ad.sum_(x + constant(_C31)),
    "sub": lambda x: ad.sum_(constant(_C34) - x),
    "mul": lambda x: ad.sum_(x * constant(_C34)),
    "div": lambda x: ad.sum_(x / constant(_C34 + 4.0)),
    "div_denom": lambda x: ad.sum_(constant(_C34) / (x + 5.0)),
    "matmul": lambda x: ad.sum_(x @ constant(_C42)),
    "transpose": lambda x: ad.sum_(ad.transpose(x) @ constant(_C32)),
    "reshape": lambda x: ad.sum_(ad.reshape(x, (4, 3)) * constant(_C43)),
    "row_softmax": lambda x: ad.sum_(ad.row_softmax(x) * constant(_C34)),
    "sigmoid": lambda x: ad.sum_(ad.sigmoid(x) * constant(_C34)),
    "tanh": lambda x: ad.sum_(ad.tanh(x) * constant(_C34)),
    "sin": lambda x: ad.sum_(ad.sin(x) * constant(_C34)),
    "cos": lambda x: ad.sum_(ad.cos(x) * constant(_C34)),
    "exp": lambda x: ad.sum_(ad.exp(x) * constant(_C34)),
    "log": lambda x: ad.sum_(ad.log(x + 6.0) * constant(_C34)),
    "sqrt": lambda x: ad.sum_(ad.sqrt(x + 6.0) * constant(_C34)),
    "square": lambda x: ad.sum_(ad.square(x) * constant(_C34)),
    "abs": lambda x: ad.sum_(ad.abs_(x) * constant(_C34)),
    "sum_axis0": lambda x: ad.sum_(ad.sum_(x, axis=0) * constant(np.arange(4.0))),
    "sum_axis1_keep": lambda x: ad.sum_(ad.sum_(x, axis=1, keepdims=True) * constant(_C31)),
    "mean": lambda x: ad.mean(x),
    "mean_axis": lambda x: ad.sum_(ad.mean(x, axis=0, keepdims=True) * constant(_C34)),
    "cosine_rows": lambda x: ad.sum_(ad.cosine_rows(x, constant(_C34))),
    "smooth_l1": lambda x: ad.sum_(ad.smooth_l1(x, constant(_C34))),
    "gather_rows": lambda x: ad.sum_(ad.gather_rows(x, _IDX) * constant(_C44[_IDX])),
}
_C44 = RNG.standard_normal((4, 4))


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    x = RNG.standard_normal((3, 4)) + 0.31
    assert grad_check(PRIMITIVES[name], x, eps=1e-5) < 1e-6


def test_scatter_matrix_gradient():
    vi = np.array([0, 1, 2, 2, 4], dtype=np.intp)
    rr = np.array([0, 0, 1, 2, 1], dtype=np.intp)
    cc = np.array([0, 1, 2, 0, 1], dtype=np.intp)
    w = constant(RNG.standard_normal((3, 3)))

    def f(x):
        return ad.sum_(ad.scatter_matrix(x, vi, rr, cc, (3, 3)) * w)

    assert grad_check(f, RNG.standard_normal(5), eps=1e-5) < 1e-6


def test_concat_rows_gradient():
    other = constant(RNG.standard_normal((2, 4)))

    def f(x):
        return ad.sum_(ad.square(ad.concat_rows([x, other])))

    assert grad_check(f, RNG.standard_normal((3, 4)), eps=1e-5) < 1e-6


def test_grad_check_validates_eps():
    with pytest.raises(ValueError):
        grad_check(lambda x: ad.sum_(x), np.ones(2), eps=0.5)


def test_grad_check_flags_nonfinite():
    with np.errstate(invalid="ignore"), pytest.raises(NonFiniteValue):
        grad_check(lambda x: ad.sum_(ad.log(x)), np.array([-1.0]))


def test_grad_check_exact_quadratic():
    err = grad_check(lambda x: ad.sum_(ad.square(x)), RNG.standard_normal((4, 4)))
    assert err < 1e-8


def test_deterministic_accumulation():
    def run():
        tape = Tape()
        x = tape.leaf(np.linspace(0.1, 1.0, 12).reshape(3, 4))
        y = ad.row_softmax(x @ constant(_C42))
        out = ad.sum_(y * y) + ad.mean(ad.tanh(x))
        tape.backward(out)
        return tape.grad(x).copy()

    a, b = run(), run()
    assert np.array_equal(a, b)
