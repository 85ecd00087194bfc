"""Acceptance criteria, each at its stated tolerance.

Every test records one ``criterion N: PASS|FAIL`` line, printed in the
terminal summary, before asserting. The MNIST runs are marked ``slow``.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from ancm import anchors as A
from ancm import checkpoint
from ancm import data as D
from ancm import metrics, ncm
from ancm import network as N
from ancm import train as T
from ancm.optim import TrainConfig

from gradcheck import check_network, layer_variants, random_instance
from oracles import central_diff, cosine_loops, euclid_loops, nll_loops, posterior_loops, rel_err

MNIST = Path(__file__).resolve().parent.parent / "data" / "mnist-subset"
ORACLE = {"euclidean": euclid_loops, "cosine": cosine_loops}


@pytest.fixture
def verdict(request):
    def record(number, ok, detail):
        request.config.acceptance_lines.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return record


def free_anchors(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return A.AnchorSet(rows, np.arange(len(rows)), A.min_pairwise_angle(rows), "file")


def unit_rows(rng, c, d):
    a = rng.standard_normal((c, d))
    return a / np.linalg.norm(a, axis=1, keepdims=True)


# -- 1. gradients ------------------------------------------------------------------


def ncm_loss_oracle(F, rows, y, kind):
    return nll_loops([posterior_loops([ORACLE[kind](f, a) for a in rows]) for f in F], y)


def softmax_oracle(F, W, b, y):
    rows = []
    for f in F:
        logits = [sum(f[k] * W[k][c] for k in range(len(f))) + b[c] for c in range(len(b))]
        rows.append(posterior_loops([-z for z in logits]))
    return nll_loops(rows, y)


def test_criterion_1_gradients(verdict):
    start = time.perf_counter()
    n, tol = 100, 1e-5
    rng = np.random.default_rng(2024)
    worst = {}
    for name, layer, shape in layer_variants():
        errs = []
        for _ in range(n):
            # batch 3: with two samples BatchNorm maps each channel to +-1, leaving
            # only epsilon-sized input gradients below finite-difference resolution
            net, x = random_instance(layer, shape, 3, rng)
            errs.append(max(check_network(net, x, rng).values()))
        worst[name] = max(errs)
    for kind in metrics.METRICS:
        errs = []
        for _ in range(n):
            d = int(rng.integers(2, 9))
            f1, f2 = rng.standard_normal(d), rng.standard_normal(d)
            num = central_diff(lambda v: ORACLE[kind](v, f2), f1)
            errs.append(rel_err(metrics.evaluate(kind, f1, f2).grad_f1, num))
        worst[f"metric-{kind}"] = max(errs)
    for kind in metrics.METRICS:
        errs = []
        for _ in range(n):
            c, d, b = int(rng.integers(2, 7)), int(rng.integers(2, 9)), int(rng.integers(1, 6))
            rows = unit_rows(rng, c, d)
            F, y = rng.standard_normal((b, d)), rng.integers(0, c, b)
            g = ncm.loss_feature_grad(F, free_anchors(rows), y, kind)
            errs.append(rel_err(g, central_diff(lambda v: ncm_loss_oracle(v, rows, y, kind), F)))
        worst[f"ncm-loss-{kind}"] = max(errs)
    errs = []
    for _ in range(n):
        c, d, b = int(rng.integers(2, 7)), int(rng.integers(2, 9)), int(rng.integers(1, 6))
        F, W, bias = rng.standard_normal((b, d)), rng.standard_normal((d, c)), rng.standard_normal(c)
        y = rng.integers(0, c, b)
        _, gF, gW, gb = ncm.softmax_baseline(F, W, bias, y)
        errs.append(max(
            rel_err(gF, central_diff(lambda v: softmax_oracle(v, W, bias, y), F)),
            rel_err(gW, central_diff(lambda v: softmax_oracle(F, v, bias, y), W)),
            rel_err(gb, central_diff(lambda v: softmax_oracle(F, W, v, y), bias)),
        ))
    worst["softmax"] = max(errs)
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if v > tol}
    ok = not bad and elapsed < 60
    verdict(1, ok, f"{len(worst)} groups x {n} instances, worst rel err {max(worst.values()):.2e} "
                   f"(tol {tol:g}), {elapsed:.1f}s" + (f", failing {bad}" if bad else ""))


# -- 2. posterior normalization and shift invariance ------------------------------------------


def test_criterion_2_posteriors(verdict):
    rng = np.random.default_rng(7)
    worst_sum = worst_shift = 0.0
    for _ in range(1000):
        b, c = int(rng.integers(1, 6)), int(rng.integers(2, 12))
        d = rng.uniform(0, rng.choice([1.0, 10.0, 100.0]), (b, c))
        k = rng.uniform(-100, 100)
        p = ncm.posteriors_from_distances(d).probs
        q = ncm.posteriors_from_distances(d + k).probs
        worst_sum = max(worst_sum, float(np.max(np.abs(p.sum(axis=1) - 1))))
        worst_shift = max(worst_shift, float(np.max(np.abs(p - q))))
    ok = worst_sum <= 1e-12 and worst_shift <= 1e-12
    verdict(2, ok, f"1000 instances, max |row sum - 1| {worst_sum:.1e}, max shift change {worst_shift:.1e}")


# -- 3. anchor generators -----------------------------------------------------------------


def test_criterion_3_anchor_principles(verdict):
    start = time.perf_counter()
    norm_dev = 0.0
    polar_ok = ortho_ok = True
    for c in range(2, 21):
        s = A.generate_polar_2d(c)
        norm_dev = max(norm_dev, float(np.max(np.abs(np.linalg.norm(s.anchors, axis=1) - 1))))
        polar_ok &= s.min_pairwise_angle == 2 * math.pi / c
        polar_ok &= abs(A.min_pairwise_angle(s.anchors) - 2 * math.pi / c) <= 1e-12
    for c, d in [(2, 2), (3, 5), (10, 10), (10, 64), (64, 64)]:
        s = A.generate_orthonormal(c, d)
        norm_dev = max(norm_dev, float(np.max(np.abs(np.linalg.norm(s.anchors, axis=1) - 1))))
        ortho_ok &= s.min_pairwise_angle == math.pi / 2 and A.min_pairwise_angle(s.anchors) == math.pi / 2
    for c, d, seed in [(4, 3, 0), (10, 8, 1), (30, 16, 2)]:
        s = A.generate_repulsion(c, d, seed=seed)
        norm_dev = max(norm_dev, float(np.max(np.abs(np.linalg.norm(s.anchors, axis=1) - 1))))
    tetra = A.generate_repulsion(4, 3, seed=0).min_pairwise_angle
    gap = abs(math.degrees(tetra - math.acos(-1 / 3)))
    elapsed = time.perf_counter() - start
    ok = norm_dev <= 1e-9 and polar_ok and ortho_ok and gap <= 2.0 and elapsed < 60
    verdict(3, ok, f"max norm deviation {norm_dev:.1e}, polar exact {polar_ok}, orthonormal pi/2 {ortho_ok}, "
                   f"repulsion(4,3) {math.degrees(tetra):.3f} deg (off {gap:.3f}), {elapsed:.1f}s")


# -- 4. anchors at class means reproduce classic NCM --------------------------------------


def test_criterion_4_classic_ncm_oracle(verdict):
    rng = np.random.default_rng(4)
    agree = 0
    for _ in range(50):
        c, d = int(rng.integers(2, 6)), int(rng.integers(2, 7))
        counts = rng.integers(3, 11, c)
        F = np.concatenate([rng.standard_normal((k, d)) + 2 * rng.standard_normal(d) for k in counts])
        y = np.repeat(np.arange(c), counts)
        means = ncm.class_means(F, y, c)
        Q = rng.standard_normal((200, d)) * 3
        same = all(
            np.array_equal(ncm.classify(Q, free_anchors(means.means), kind),
                           ncm.ncm_classic_classify(Q, means, kind))
            for kind in metrics.METRICS
        )
        agree += int(same)
    verdict(4, agree == 50, f"{agree}/50 datasets give identical decisions under both metrics")


# -- 5, 8, 9. toy geometry, anchor fixedness, determinism ---------------------------------------


TOY_CFG = TrainConfig(batch_size=8, max_epochs=40, seed=0)


def toy_run(kind, out_dir):
    """4-class 2-D blobs, polar anchors, toy2d net; writes log and checkpoint."""
    s = A.generate_polar_2d(4)
    ds = D.make_blobs(4, 2, 100, D.blob_centers(4, 2, 3.0), 0.3, seed=0)
    net = N.init_network(N.preset_layers("toy2d", (2,)), (2,), seed=0)
    before = s.checksum()
    start = time.perf_counter()
    trained, log = T.train(net, s, kind, ds, TOY_CFG)
    elapsed = time.perf_counter() - start
    out_dir.mkdir(parents=True, exist_ok=True)
    log.to_csv(out_dir / "train_log.csv")
    checkpoint.save(trained, out_dir / "checkpoint.ancm")
    f = T.extract_features(trained, ds.samples)
    own = s.by_class[ds.labels]
    cos = np.sum(f * own, axis=1) / np.linalg.norm(f, axis=1)
    return {
        "acc": T.accuracy(trained, s, kind, ds),
        "dist": float(np.linalg.norm(f - own, axis=1).mean()),
        "angle": float(np.degrees(np.arccos(np.clip(cos, -1, 1))).mean()),
        "seconds": elapsed,
        "checksum_same": s.checksum() == before,
        "dir": out_dir,
    }


@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    return {kind: toy_run(kind, root / kind) for kind in metrics.METRICS}


def test_criterion_5_toy_geometry(verdict, toy_runs):
    e, c = toy_runs["euclidean"], toy_runs["cosine"]
    seconds = e["seconds"] + c["seconds"]
    ok = (e["acc"] == 1.0 and e["dist"] < 0.1 and c["acc"] == 1.0 and c["angle"] < 10.0 and seconds < 120)
    verdict(5, ok, f"E-NCM acc {e['acc']:.4f} mean dist {e['dist']:.4f}; "
                   f"C-NCM acc {c['acc']:.4f} mean angle {c['angle']:.3f} deg; {seconds:.1f}s")


def test_criterion_9_determinism(verdict, toy_runs, tmp_path):
    same = True
    for kind, first in toy_runs.items():
        again = toy_run(kind, tmp_path / kind)
        for name in ("train_log.csv", "checkpoint.ancm"):
            same &= (first["dir"] / name).read_bytes() == (again["dir"] / name).read_bytes()
    verdict(9, same, "repeated toy runs give byte-identical train_log.csv and checkpoint.ancm" if same
            else "repeated toy runs differ")


# -- 6, 7. desk-scale MNIST ------------------------------------------------------------------------


MNIST_FILES = ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz",
               "test-images-idx3-ubyte.gz", "test-labels-idx1-ubyte.gz")


def mnist_data():
    tr_i, tr_l, te_i, te_l = (MNIST / f for f in MNIST_FILES)
    train = D.normalize_global(D.load_idx(tr_i, tr_l, 10))
    test = D.normalize_global(D.load_idx(te_i, te_l, 10), train.norm_stats)
    return train, test


def mnist_run(kind, epochs, lr, train, test):
    shape = train.sample_shape
    net = N.init_network(N.preset_layers("mnist-mini", shape, dropout=0.1), shape, seed=0,
                         head_classes=10 if kind == "softmax" else None)
    s = None if kind == "softmax" else A.generate_orthonormal(10, 64)
    before = s.checksum() if s is not None else None
    cfg = TrainConfig(lr=lr, batch_size=64, max_epochs=epochs, dropout=0.1, seed=0)
    _, log = T.train(net, s, kind, train, cfg, test_data=test)
    return {"log": log, "checksum_same": s is None or s.checksum() == before}


@pytest.fixture(scope="module")
def mnist_runs():
    if not all((MNIST / f).is_file() for f in MNIST_FILES):
        pytest.fail(f"MNIST subset missing under {MNIST}; run tools/build_mnist_subset.py")
    train, test = mnist_data()
    assert (len(train), len(test)) == (10000, 2000)
    return {
        "euclidean": mnist_run("euclidean", 30, 0.1, train, test),
        "cosine": mnist_run("cosine", 30, 0.1, train, test),
        "softmax": mnist_run("softmax", 20, 0.01, train, test),
    }


@pytest.mark.slow
def test_criterion_6_mnist_accuracy(verdict, mnist_runs):
    acc, seconds = {}, 0.0
    for kind, run in mnist_runs.items():
        first20 = run["log"].records[:20]
        acc[kind] = first20[-1].test_acc
        seconds += sum(r.seconds for r in first20)
    gaps = {k: 100 * (acc[k] - acc["softmax"]) for k in ("euclidean", "cosine")}
    ok = all(a >= 0.95 for a in acc.values()) and all(abs(g) <= 2.0 for g in gaps.values()) and seconds <= 1800
    verdict(6, ok, "epoch-20 test acc " + ", ".join(f"{k} {100 * a:.2f}%" for k, a in acc.items())
            + f"; NCM minus softmax {gaps['euclidean']:+.2f} / {gaps['cosine']:+.2f} points; "
              f"{seconds / 60:.1f} min for 20 epochs x 3")


@pytest.mark.slow
def test_criterion_7_convergence_shape(verdict, mnist_runs):
    parts, ok = [], True
    for kind in ("euclidean", "cosine"):
        losses = mnist_runs[kind]["log"].losses()
        ratio = losses[9] / min(losses[:30])
        ok &= len(losses) >= 30 and ratio <= 1.10
        parts.append(f"{kind} epoch-10 loss {losses[9]:.4f} vs min {min(losses):.4f} (+{100 * (ratio - 1):.1f}%)")
    verdict(7, ok, "; ".join(parts))


@pytest.mark.slow
def test_criterion_8_anchor_fixedness(verdict, toy_runs, mnist_runs):
    runs = {f"toy-{k}": v for k, v in toy_runs.items()}
    runs.update({f"mnist-{k}": v for k, v in mnist_runs.items()})
    same = {k: v["checksum_same"] for k, v in runs.items()}
    verdict(8, all(same.values()), f"anchor checksum unchanged in {sum(same.values())}/{len(same)} runs")
