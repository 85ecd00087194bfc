"""Fixed class anchors on the unit hypersphere.

Every anchor has unit L2 norm and the set should be spread out so that the
minimum angle between any two anchors is large. Three constructions are
provided:

* ``polar2d``: ``C`` equally spaced points on the unit circle.
* ``orthonormal``: the first ``C`` standard basis vectors of ``R^d``.
* ``repulsion``: an iterative spreading procedure usable when ``C > d``.
"""

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParseError

NORM_TOL = 1e-9


@dataclass(frozen=True)
class AnchorSet:
    """``C`` unit-norm anchors (one per row) and their class assignment.

    ``class_of_row[r]`` is the class label served by anchor row ``r``.
    """

    anchors: np.ndarray
    class_of_row: np.ndarray
    min_pairwise_angle: float
    method: str
    trace: tuple = field(default=(), compare=False)

    def __post_init__(self):
        a = np.array(self.anchors, dtype=np.float64)
        a.setflags(write=False)
        perm = np.array(self.class_of_row, dtype=np.int64)
        perm.setflags(write=False)
        if a.ndim != 2:
            raise ValueError(f"anchors must be 2-D, got shape {a.shape}")
        if sorted(perm.tolist()) != list(range(a.shape[0])):
            raise ValueError("class_of_row must be a permutation of 0..C-1")
        object.__setattr__(self, "anchors", a)
        object.__setattr__(self, "class_of_row", perm)

    @property
    def num_classes(self):
        return self.anchors.shape[0]

    @property
    def dim(self):
        return self.anchors.shape[1]

    @property
    def by_class(self):
        """Anchors reordered so that row ``c`` is the anchor of class ``c``."""
        out = np.empty_like(self.anchors)
        out[self.class_of_row] = self.anchors
        return out

    def checksum(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.anchors, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.class_of_row, dtype="<i8").tobytes())
        return h.hexdigest()


@dataclass
class ValidationReport:
    norm_deviation: np.ndarray
    min_pairwise_angle: float
    theta_m: float
    bad_rows: list

    @property
    def norms_ok(self):
        return not self.bad_rows

    @property
    def angle_ok(self):
        return self.min_pairwise_angle >= self.theta_m

    @property
    def passed(self):
        return self.norms_ok and self.angle_ok

    def summary(self):
        lines = [
            f"min angle {math.degrees(self.min_pairwise_angle):.3f}°"
            f" (required >= {math.degrees(self.theta_m):.3f}°)",
            f"max norm deviation {float(np.max(self.norm_deviation)):.3e}",
        ]
        if self.bad_rows:
            lines.append(f"rows off the unit sphere: {self.bad_rows}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def pairwise_angles(a):
    """Angles between all rows of ``a`` as a ``C x C`` matrix.

    Uses ``2 * atan2(|u - v|, |u + v|)`` on normalized rows, which stays
    accurate for nearly parallel and nearly antipodal pairs where ``arccos``
    loses precision.
    """
    a = np.asarray(a, dtype=np.float64)
    u = a / np.linalg.norm(a, axis=1, keepdims=True)
    diff = np.linalg.norm(u[:, None, :] - u[None, :, :], axis=2)
    summ = np.linalg.norm(u[:, None, :] + u[None, :, :], axis=2)
    return 2.0 * np.arctan2(diff, summ)


def min_pairwise_angle(a):
    a = np.asarray(a)
    if a.shape[0] < 2:
        return math.pi
    ang = pairwise_angles(a)
    iu = np.triu_indices(a.shape[0], k=1)
    return float(ang[iu].min())


def generate_polar_2d(num_classes):
    if num_classes < 2:
        raise ValueError(f"polar2d needs at least 2 classes, got {num_classes}")
    theta = 2.0 * math.pi * np.arange(num_classes) / num_classes
    anchors = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return AnchorSet(anchors, np.arange(num_classes), 2.0 * math.pi / num_classes, "polar2d")


def generate_orthonormal(num_classes, dim):
    if num_classes < 1:
        raise ValueError("need at least one class")
    if num_classes > dim:
        raise ValueError(
            f"orthonormal anchors need classes <= dim (got C={num_classes}, d={dim}); "
            "use the repulsion method instead"
        )
    anchors = np.eye(num_classes, dim)
    angle = math.pi / 2 if num_classes > 1 else math.pi
    return AnchorSet(anchors, np.arange(num_classes), angle, "orthonormal")


def generate_repulsion(num_classes, dim, seed=0, iterations=2000, step=0.05):
    """Spread ``C`` points over the unit sphere in ``R^d``.

    Minimizes a log-sum-exp smoothing of the largest pairwise cosine
    similarity by projected gradient descent: after each step every row is
    renormalized to unit length. The sharpness of the smoothing grows
    geometrically over the run (10 to 1000) while the step shrinks, so early
    steps spread points globally and late steps polish the closest pair.
    The iterate with the largest minimum angle is returned; ``trace``
    records the best-so-far minimum angle after every step.
    """
    if num_classes < 2:
        raise ValueError(f"repulsion needs at least 2 classes, got {num_classes}")
    if dim < 2:
        raise ValueError(f"repulsion needs dim >= 2, got {dim}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((num_classes, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    iu = np.triu_indices(num_classes, k=1)

    best = x.copy()
    best_cos = float((x @ x.T)[iu].max())
    trace = [math.acos(min(best_cos, 1.0))]
    for it in range(iterations):
        frac = it / max(iterations - 1, 1)
        sharpness = 10.0 * 100.0**frac
        lr = step * (1.02 - frac)
        cos = x @ x.T
        z = sharpness * cos[iu]
        w = np.exp(z - z.max())
        w /= w.sum()
        # d/dx_i of sum_{i<j} w_ij cos_ij, projected onto the tangent plane
        weights = np.zeros((num_classes, num_classes))
        weights[iu] = w
        weights += weights.T
        grad = weights @ x
        grad -= np.sum(grad * x, axis=1, keepdims=True) * x
        x = x - lr * grad / max(w.max(), 1e-12)
        x /= np.linalg.norm(x, axis=1, keepdims=True)

        worst = float((x @ x.T)[iu].max())
        if worst < best_cos:
            best_cos = worst
            best = x.copy()
        trace.append(math.acos(max(min(best_cos, 1.0), -1.0)))
    return AnchorSet(best, np.arange(num_classes), min_pairwise_angle(best), "repulsion", tuple(trace))


def validate(anchor_set, theta_m=0.0):
    norms = np.linalg.norm(anchor_set.anchors, axis=1)
    dev = np.abs(norms - 1.0)
    bad = [int(i) for i in np.flatnonzero(dev > NORM_TOL)]
    return ValidationReport(dev, min_pairwise_angle(anchor_set.anchors), float(theta_m), bad)


def assign_classes(anchor_set, seed=None):
    """Return a copy with a new class assignment.

    ``seed=None`` gives the identity (class ``c`` uses row ``c``); an integer
    seed draws a reproducible random permutation.
    """
    n = anchor_set.num_classes
    if seed is None:
        perm = np.arange(n)
    else:
        perm = np.random.default_rng(seed).permutation(n)
    return replace(anchor_set, class_of_row=perm)


def save_csv(anchor_set, path):
    header = ["class"] + [f"dim_{j}" for j in range(anchor_set.dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in range(anchor_set.num_classes):
            w.writerow([int(anchor_set.class_of_row[r])] + [repr(float(v)) for v in anchor_set.anchors[r]])


def load_csv(path, method="file"):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "class":
        raise ParseError(f"{path}: missing 'class,dim_0,...' header", 0)
    dim = len(rows[0]) - 1
    classes, vecs = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != dim + 1:
            raise ParseError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(row)}")
        try:
            classes.append(int(row[0]))
            vecs.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    anchors = np.array(vecs, dtype=np.float64).reshape(len(vecs), dim)
    return AnchorSet(anchors, np.array(classes), min_pairwise_angle(anchors), method)
