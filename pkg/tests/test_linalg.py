import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ancm.errors import DimensionError
from ancm.linalg import axpy, matmul, row_reduce

from oracles import matmul_loops


def test_identity_product():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), m), m)


def test_hand_dot_product():
    assert np.array_equal(matmul([[1.0, 2.0]], [[3.0], [4.0]]), [[11.0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 7))
    b = rng.standard_normal((7, 3))
    np.testing.assert_allclose(matmul(a, b), matmul_loops(a.tolist(), b.tolist()), rtol=0, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_matmul_associative(n, k, m, p, seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.standard_normal((n, k)), rng.standard_normal((k, m)), rng.standard_normal((m, p))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    scale = max(np.abs(left).max(), 1.0)
    assert np.abs(left - right).max() <= 1e-9 * scale


def test_row_sum():
    assert np.array_equal(row_reduce([[1, 2], [3, 4]], "sum"), [3, 7])


def test_argmax_tie_goes_to_lowest_column():
    assert row_reduce([[5, 5]], "argmax").tolist() == [0]


def test_mean_matches_scalar_loop():
    rng = np.random.default_rng(1)
    m = rng.standard_normal((3, 4))
    expected = []
    for row in m.tolist():
        s = 0.0
        for v in row:
            s += v
        expected.append(s / len(row))
    np.testing.assert_allclose(row_reduce(m, "mean"), expected, rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 9)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_sum_is_bitwise_scalar_loop(m):
    out = row_reduce(m, "sum")
    for i, row in enumerate(m.tolist()):
        s = row[0]
        for v in row[1:]:
            s += v
        assert out[i] == s


def test_empty_reduction_raises():
    with pytest.raises(DimensionError):
        row_reduce(np.zeros((2, 0)), "sum")


def test_unknown_reduction():
    with pytest.raises(ValueError):
        row_reduce([[1.0]], "median")


def test_axpy_cases():
    rng = np.random.default_rng(2)
    x, y = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    assert np.array_equal(axpy(0.0, x, y), y)
    assert np.array_equal(axpy(1.0, x, np.zeros_like(x)), x)
    g, w = x, y
    expected = np.array([[-0.1 * gv + wv for gv, wv in zip(gr, wr)] for gr, wr in zip(g.tolist(), w.tolist())])
    np.testing.assert_allclose(axpy(-0.1, g, w), expected, rtol=0, atol=1e-15)


def test_axpy_shape_mismatch():
    with pytest.raises(DimensionError):
        axpy(1.0, np.ones((2, 2)), np.ones((2, 3)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_bounded_inputs_stay_finite(m):
    assert np.all(np.isfinite(matmul(m, m.T)))
    for kind in ("sum", "mean", "max"):
        assert np.all(np.isfinite(row_reduce(m, kind)))
    assert np.all(np.isfinite(axpy(-0.5, m, m)))
