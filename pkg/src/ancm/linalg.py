"""Dense float64 kernels with shape checking.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. The
functions here never modify their arguments.
"""

import numpy as np

from .errors import DimensionError

_REDUCTIONS = ("sum", "mean", "max", "argmax")


def as_matrix(a):
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def row_reduce(m, kind):
    """Reduce each row of ``m`` to a scalar.

    Sums accumulate strictly left to right so results match a scalar loop
    bit for bit. ``argmax`` breaks ties toward the lowest column.
    """
    m = as_matrix(m)
    if m.shape[0] == 0 or m.shape[1] == 0:
        raise DimensionError(f"cannot reduce empty matrix of shape {m.shape}")
    if kind not in _REDUCTIONS:
        raise ValueError(f"unknown reduction {kind!r}; expected one of {_REDUCTIONS}")
    if kind == "argmax":
        return np.argmax(m, axis=1)
    if kind == "max":
        return m.max(axis=1)
    acc = m[:, 0].copy()
    for j in range(1, m.shape[1]):
        acc += m[:, j]
    if kind == "mean":
        acc /= m.shape[1]
    return acc


def axpy(alpha, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"axpy shape mismatch: {x.shape} vs {y.shape}")
    return alpha * x + y
