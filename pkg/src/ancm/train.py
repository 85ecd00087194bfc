"""Mini-batch training of a feature extractor under the anchor NCM loss.

Each epoch shuffles the training set (seeded by ``(seed, epoch)``), and for
every batch runs forward in train mode, computes the loss and its gradient
with respect to the features, backpropagates, and applies one SGD step.
The loss is averaged over the batch so the learning rate does not depend on
the batch size. After each epoch the network is evaluated in eval mode and
the plateau rule picks the next learning rate.

Passing ``kind="softmax"`` (and no anchors) trains the softmax baseline
through the network's linear head instead.
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import ncm
from .data import augment_pad_crop_flip, batches
from .errors import DimensionError, NumericalAbort
from .metrics import METRICS
from .optim import plateau_schedule, sgd_step

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "train_loss", "train_acc", "test_acc", "lr", "seconds", "clamp_events")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    lr: float
    seconds: float
    clamp_events: int


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    @property
    def clamp_events(self):
        return sum(r.clamp_events for r in self.records)

    def losses(self):
        return [r.train_loss for r in self.records]

    def to_csv(self, path, timing=False):
        """Write one row per epoch.

        Wall-clock seconds are only written when ``timing`` is set; otherwise
        the column is left empty so that repeated runs give identical files.
        """
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in self.records:
                w.writerow([
                    r.epoch,
                    repr(r.train_loss),
                    repr(r.train_acc),
                    "" if math.isnan(r.test_acc) else repr(r.test_acc),
                    repr(r.lr),
                    f"{r.seconds:.3f}" if timing else "",
                    r.clamp_events,
                ])

    @classmethod
    def from_csv(cls, path):
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                out.records.append(EpochRecord(
                    int(row["epoch"]),
                    float(row["train_loss"]),
                    float(row["train_acc"]),
                    float(row["test_acc"]) if row["test_acc"] else math.nan,
                    float(row["lr"]),
                    float(row["seconds"]) if row["seconds"] else math.nan,
                    int(row["clamp_events"]),
                ))
        return out


def _check_kind(kind, anchors, net):
    if kind == "softmax":
        if anchors is not None:
            raise ValueError("the softmax baseline does not use anchors")
        if net.head is None:
            raise ValueError("softmax training needs a network with a classification head")
        return
    if kind not in METRICS:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {METRICS + ('softmax',)}")
    if anchors is None:
        raise ValueError(f"{kind} NCM training needs anchors")
    if anchors.dim != net.feature_dim:
        raise DimensionError(f"anchor dim {anchors.dim} does not match feature dim {net.feature_dim}")


def predict(net, anchors, kind, samples, chunk=1000):
    """Eval-mode class predictions."""
    out = []
    for i in range(0, len(samples), chunk):
        feats, _ = net.forward(samples[i:i + chunk], "eval")
        out.append(decide(net, anchors, kind, feats))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def extract_features(net, samples, chunk=1000):
    parts = [net.forward(samples[i:i + chunk], "eval")[0] for i in range(0, len(samples), chunk)]
    return np.concatenate(parts) if parts else np.zeros((0, net.feature_dim))


def accuracy(net, anchors, kind, dataset):
    if dataset is None or len(dataset) == 0:
        return math.nan
    return float(np.mean(predict(net, anchors, kind, dataset.samples) == dataset.labels))


def decide(net, anchors, kind, feats):
    if kind == "softmax":
        return np.argmax(feats @ net.head["W"] + net.head["b"], axis=1)
    return ncm.classify(feats, anchors, kind)


def _batch_loss(net, anchors, kind, feats, labels):
    """Returns ``(loss, feature_grad, head_grads, predictions, clamped)``."""
    if kind == "softmax":
        W, b = net.head["W"], net.head["b"]
        logits = feats @ W + b
        probs = ncm.softmax_rows(logits)
        loss, clamped = ncm.nll(probs, labels)
        g = ncm.score_grad(probs, labels)
        head = {"head.W": feats.T @ g, "head.b": g.sum(axis=0)}
        return loss, g @ W.T, head, np.argmax(logits, axis=1), clamped
    loss, fgrad, post, clamped = ncm.loss_and_grad(feats, anchors, labels, kind)
    return loss, fgrad, {}, np.argmax(post.probs, axis=1), clamped


def train(net, anchors, kind, data, cfg, test_data=None, on_epoch=None):
    """Train a copy of ``net``; returns ``(trained_net, TrainLog)``.

    ``kind`` is ``"euclidean"`` (E-NCM), ``"cosine"`` (C-NCM) or
    ``"softmax"``. ``on_epoch`` is called with each new :class:`EpochRecord`.
    Raises :class:`NumericalAbort` on a non-finite loss.
    """
    _check_kind(kind, anchors, net)
    if data.sample_shape != tuple(net.input_shape):
        raise DimensionError(f"data samples {data.sample_shape} do not match network input {net.input_shape}")
    if anchors is not None and data.num_classes > anchors.num_classes:
        raise ValueError(f"data has {data.num_classes} classes but only {anchors.num_classes} anchors")
    net = net.copy()
    checksum = anchors.checksum() if anchors is not None else None
    train_log = TrainLog()
    velocity = {}
    lr = cfg.lr

    for epoch in range(cfg.max_epochs):
        start = time.perf_counter()
        dropout_rng = np.random.default_rng([cfg.seed, epoch, 1])
        loss_sum, correct, seen, clamped_total = 0.0, 0, 0, 0
        for b, idx in enumerate(batches(data, cfg.batch_size, cfg.seed, epoch)):
            x = data.samples[idx]
            y = data.labels[idx]
            if cfg.augment:
                x = augment_pad_crop_flip(x, pad=cfg.pad, flip_prob=cfg.flip_prob, seed=[cfg.seed, epoch, b, 2])
            feats, trace = net.forward(x, "train", rng=dropout_rng)
            loss, fgrad, head_grads, pred, clamped = _batch_loss(net, anchors, kind, feats, y)
            if not math.isfinite(loss):
                layer = net.first_nonfinite_layer(trace) or "loss"
                raise NumericalAbort(
                    f"non-finite loss at epoch {epoch + 1}, batch {b} (first bad output: {layer})",
                    epoch=epoch + 1, batch=b, layer=layer,
                )
            grads, _ = net.backward(trace, fgrad, input_grad=False)
            grads.update(head_grads)
            params = dict(net.named_params())
            new_params, velocity = sgd_step(params, grads, velocity, cfg, lr=lr)
            for key, value in new_params.items():
                net.set_param(key, value)

            loss_sum += loss * len(idx)
            correct += int(np.sum(pred == y))
            seen += len(idx)
            clamped_total += clamped

        rec = EpochRecord(
            epoch=epoch + 1,
            train_loss=loss_sum / max(seen, 1),
            train_acc=correct / max(seen, 1),
            test_acc=accuracy(net, anchors, kind, test_data),
            lr=lr,
            seconds=time.perf_counter() - start,
            clamp_events=clamped_total,
        )
        train_log.records.append(rec)
        log.info(
            "epoch %d loss %.5f train_acc %.4f test_acc %.4f lr %g (%.1fs)",
            rec.epoch, rec.train_loss, rec.train_acc, rec.test_acc, rec.lr, rec.seconds,
        )
        if on_epoch is not None:
            on_epoch(rec)
        lr = plateau_schedule(train_log, cfg)

    if anchors is not None and anchors.checksum() != checksum:
        raise RuntimeError("anchors changed during training")
    return net, train_log
