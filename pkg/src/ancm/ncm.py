"""Anchor-based nearest class mean: posteriors, loss, gradient, decisions.

Labels are 0-based integers ``0..C-1``. Column ``c`` of every ``B x C``
matrix refers to class ``c`` (anchors are looked up through
``AnchorSet.by_class``).

Also contains the classic data-mean NCM classifier, used as a reference for
the anchor decision rule, and the softmax cross-entropy baseline head.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import metrics
from .errors import DimensionError

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class PosteriorBatch:
    probs: np.ndarray

    @property
    def num_classes(self):
        return self.probs.shape[1]


@dataclass(frozen=True)
class ClassMeans:
    means: np.ndarray
    counts: np.ndarray


def _features(features):
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f.reshape(1, -1)
    if f.ndim != 2:
        raise DimensionError(f"features must be B x d, got shape {f.shape}")
    return f


def _labels(labels, batch, num_classes):
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != batch:
        raise DimensionError(f"expected {batch} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise ValueError("labels must be integers")
        y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        bad = y[(y < 0) | (y >= num_classes)]
        raise ValueError(f"label {int(bad[0])} outside 0..{num_classes - 1}")
    return y


def softmax_rows(scores):
    """Row-wise softmax with max subtraction."""
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def posteriors_from_distances(dist):
    return PosteriorBatch(softmax_rows(-np.asarray(dist, dtype=np.float64)))


def posteriors(features, anchor_set, kind):
    f = _features(features)
    dist = metrics.distances(kind, f, anchor_set.by_class)
    return posteriors_from_distances(dist)


def nll(probs, labels):
    """Mean negative log-likelihood of the true class.

    Returns ``(loss, clamped)`` where ``clamped`` counts true-class
    probabilities that were floored at ``PROB_FLOOR`` before the log.
    """
    p = np.asarray(probs.probs if isinstance(probs, PosteriorBatch) else probs)
    y = _labels(labels, p.shape[0], p.shape[1])
    true_p = p[np.arange(p.shape[0]), y]
    clamped = int(np.count_nonzero(true_p < PROB_FLOOR))
    if clamped:
        log.warning("%d posterior(s) floored at %g before log", clamped, PROB_FLOOR)
    return float(-np.mean(np.log(np.maximum(true_p, PROB_FLOOR)))), clamped


def ncm_loss(probs, labels):
    return nll(probs, labels)[0]


def score_grad(probs, labels):
    """Gradient of the mean loss with respect to the scores ``s = -M``."""
    p = np.asarray(probs.probs if isinstance(probs, PosteriorBatch) else probs)
    y = _labels(labels, p.shape[0], p.shape[1])
    g = p.copy()
    g[np.arange(p.shape[0]), y] -= 1.0
    return g / p.shape[0]


def loss_and_grad(features, anchor_set, labels, kind):
    """Forward and backward through posteriors and loss in one pass.

    Returns ``(loss, feature_grad, probs, clamped)``.
    """
    f = _features(features)
    if f.shape[1] != anchor_set.dim:
        raise DimensionError(f"feature dim {f.shape[1]} does not match anchor dim {anchor_set.dim}")
    A = anchor_set.by_class
    dist = metrics.distances(kind, f, A)
    post = posteriors_from_distances(dist)
    loss, clamped = nll(post, labels)
    # dL/dM = -dL/ds
    grad = metrics.distances_backward(kind, f, A, dist, -score_grad(post, labels))
    return loss, grad, post, clamped


def loss_feature_grad(features, anchor_set, labels, kind):
    return loss_and_grad(features, anchor_set, labels, kind)[1]


def classify(features, anchor_set, kind):
    f = _features(features)
    dist = metrics.distances(kind, f, anchor_set.by_class)
    # argmin returns the first minimum, i.e. the lowest class label on ties
    return np.argmin(dist, axis=1)


def class_means(features, labels, num_classes=None):
    f = _features(features)
    y = np.asarray(labels).astype(np.int64)
    if y.shape != (f.shape[0],):
        raise DimensionError(f"expected {f.shape[0]} labels, got shape {y.shape}")
    if num_classes is None:
        num_classes = int(y.max()) + 1
    counts = np.bincount(y, minlength=num_classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"class {int(empty[0])} has no samples")
    sums = np.zeros((num_classes, f.shape[1]))
    np.add.at(sums, y, f)
    return ClassMeans(sums / counts[:, None], counts)


def ncm_classic_classify(features, means, kind):
    f = _features(features)
    m = means.means if isinstance(means, ClassMeans) else np.asarray(means)
    return np.argmin(metrics.distances(kind, f, m), axis=1)


def softmax_baseline(features, head_weights, head_bias, labels):
    """Cross-entropy over logits ``features @ head_weights + head_bias``.

    Returns ``(loss, feature_grad, weight_grad, bias_grad)``; the loss is
    averaged over the batch.
    """
    f = _features(features)
    W = np.asarray(head_weights, dtype=np.float64)
    b = np.asarray(head_bias, dtype=np.float64).ravel()
    if W.ndim != 2 or W.shape[0] != f.shape[1] or b.shape[0] != W.shape[1]:
        raise DimensionError(
            f"head shapes do not conform: features {f.shape}, weights {W.shape}, bias {b.shape}"
        )
    logits = f @ W + b
    probs = softmax_rows(logits)
    loss, _ = nll(probs, labels)
    g = score_grad(probs, labels)
    return loss, g @ W.T, f.T @ g, g.sum(axis=0)
