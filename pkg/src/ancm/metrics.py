"""Distance metrics with analytic gradients in the first argument.

Two metrics are supported, selected by name:

``euclidean``
    ``M(f1, f2) = ||f1 - f2||``. The gradient ``(f1 - f2) / ||f1 - f2||`` is
    undefined when the points coincide; there the zero subgradient is
    returned (the denominator is floored at ``GRAD_GUARD``).

``cosine``
    ``M(f1, f2) = 1 - f1.f2 / (||f1|| ||f2||)``. Zero-norm inputs raise
    :class:`DegenerateInputError`.

Gradients with respect to ``f2`` are never needed: the second argument is
always a fixed anchor.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DimensionError

METRICS = ("euclidean", "cosine")
GRAD_GUARD = 1e-12
NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class MetricEval:
    value: float
    grad_f1: np.ndarray


def check_kind(kind):
    if kind not in METRICS:
        raise ValueError(f"unknown metric {kind!r}; expected one of {METRICS}")
    return kind


def _pair(f1, f2):
    f1 = np.asarray(f1, dtype=np.float64).ravel()
    f2 = np.asarray(f2, dtype=np.float64).ravel()
    if f1.shape != f2.shape:
        raise DimensionError(f"metric arguments differ in length: {f1.size} vs {f2.size}")
    return f1, f2


def euclidean(f1, f2):
    f1, f2 = _pair(f1, f2)
    diff = f1 - f2
    value = float(np.sqrt(np.dot(diff, diff)))
    return MetricEval(value, diff / max(value, GRAD_GUARD))


def cosine(f1, f2):
    f1, f2 = _pair(f1, f2)
    n1 = float(np.sqrt(np.dot(f1, f1)))
    n2 = float(np.sqrt(np.dot(f2, f2)))
    if n1 <= NORM_FLOOR:
        raise DegenerateInputError("cosine distance undefined: f1 has (near) zero norm")
    if n2 <= NORM_FLOOR:
        raise DegenerateInputError("cosine distance undefined: f2 has (near) zero norm")
    dot = float(np.dot(f1, f2))
    sim = dot / (n1 * n2)
    value = min(max(1.0 - sim, 0.0), 2.0)
    grad = -(f2 / (n1 * n2) - dot * f1 / (n1**3 * n2))
    return MetricEval(value, grad)


def evaluate(kind, f1, f2):
    if check_kind(kind) == "euclidean":
        return euclidean(f1, f2)
    return cosine(f1, f2)


# Batched forms used by the loss: features F (B x d) against anchors A (C x d).


def distances(kind, features, anchors):
    """``B x C`` matrix of ``M(features[i], anchors[c])``."""
    check_kind(kind)
    F = np.asarray(features, dtype=np.float64)
    A = np.asarray(anchors, dtype=np.float64)
    if F.ndim != 2 or A.ndim != 2 or F.shape[1] != A.shape[1]:
        raise DimensionError(f"feature shape {F.shape} does not match anchor shape {A.shape}")
    if kind == "euclidean":
        diff = F[:, None, :] - A[None, :, :]
        return np.sqrt(np.einsum("bcd,bcd->bc", diff, diff))
    nf = np.linalg.norm(F, axis=1)
    na = np.linalg.norm(A, axis=1)
    if np.any(nf <= NORM_FLOOR):
        rows = np.flatnonzero(nf <= NORM_FLOOR).tolist()
        raise DegenerateInputError(f"cosine distance undefined: feature rows {rows} have (near) zero norm")
    if np.any(na <= NORM_FLOOR):
        rows = np.flatnonzero(na <= NORM_FLOOR).tolist()
        raise DegenerateInputError(f"cosine distance undefined: anchor rows {rows} have (near) zero norm")
    sim = (F @ A.T) / np.outer(nf, na)
    return np.clip(1.0 - sim, 0.0, 2.0)


def distances_backward(kind, features, anchors, dist, weights):
    """Contract per-pair metric gradients with ``weights`` (B x C).

    Returns ``G`` with ``G[i] = sum_c weights[i, c] * grad_f M(features[i], anchors[c])``.
    """
    F = np.asarray(features, dtype=np.float64)
    A = np.asarray(anchors, dtype=np.float64)
    if check_kind(kind) == "euclidean":
        # contract the explicit differences: expanding to F*sum(w) - w@A
        # cancels catastrophically when a feature sits on an anchor
        w = weights / np.maximum(dist, GRAD_GUARD)
        return np.einsum("bc,bcd->bd", w, F[:, None, :] - A[None, :, :])
    nf = np.linalg.norm(F, axis=1, keepdims=True)
    na = np.linalg.norm(A, axis=1)
    dots = F @ A.T
    w = weights / na
    return -(w @ A) / nf + F * (np.sum(w * dots, axis=1, keepdims=True) / nf**3)
