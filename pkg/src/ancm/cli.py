"""``ancm`` command line: gen-anchors, train, eval, export-features, plot.

Exit codes: 0 success, 2 usage/config/validation error, 3 numerical abort.
"""

import argparse
import csv
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import anchors as anchor_mod
from . import checkpoint, config, data, metrics, train
from .errors import ConfigError, NumericalAbort

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

CHECKPOINT_NAME = "checkpoint.ancm"
LOG_NAME = "train_log.csv"
MANIFEST_NAME = "manifest.txt"
ANCHORS_NAME = "anchors.csv"


# -- gen-anchors ------------------------------------------------------------------


def cmd_gen_anchors(args):
    dim = args.dim
    if dim is None:
        if args.method != "polar2d":
            raise ConfigError(f"--dim is required for method {args.method}")
        dim = 2
    seed = _seed_or_env(args.seed)
    aset = config.generate_anchors(args.method, args.classes, dim, seed)
    report = anchor_mod.validate(aset, math.radians(args.theta_m))
    print(report.summary())
    if not report.passed:
        return EXIT_USAGE
    anchor_mod.save_csv(aset, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _seed_or_env(seed):
    if seed is not None:
        return seed
    raw = os.environ.get(config.SEED_ENV, "").strip()
    if not raw:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{config.SEED_ENV} must be an integer, got {raw!r}") from None


# -- train --------------------------------------------------------------------------


def cmd_train(args):
    overrides = {k: getattr(args, k) for k in config.keys()}
    if args.config:
        cfg = config.load(args.config, overrides)
    else:
        cfg = config.resolve({}, overrides)
    cfg.validate()

    train_ds, test_ds = config.load_datasets(cfg)
    num_classes = cfg.num_classes or train_ds.num_classes
    net = config.build_network(cfg, train_ds.sample_shape, num_classes)
    aset = config.build_anchors(cfg, num_classes, net.feature_dim)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST_NAME).write_text(config.to_manifest(cfg))
    if aset is not None:
        anchor_mod.save_csv(aset, out / ANCHORS_NAME)

    def report(rec):
        test = "" if math.isnan(rec.test_acc) else f" test_acc {rec.test_acc:.4f}"
        print(f"epoch {rec.epoch:3d} loss {rec.train_loss:.6f} train_acc {rec.train_acc:.4f}{test} lr {rec.lr:g}")

    trained, train_log = train.train(net, aset, cfg.kind, train_ds, cfg.train_config(), test_ds, on_epoch=report)
    train_log.to_csv(out / LOG_NAME, timing=cfg.timing)
    checkpoint.save(trained, out / CHECKPOINT_NAME)
    if train_log.clamp_events:
        print(f"note: {train_log.clamp_events} posterior(s) were floored during training")
    print(f"wrote {out / CHECKPOINT_NAME}, {out / LOG_NAME}, {out / MANIFEST_NAME}")
    return EXIT_OK


# -- shared loading for eval / export-features ------------------------------------


def _run_config(args):
    if not args.config:
        return None
    cfg = config.load(args.config)
    cfg.validate(need_out_dir=False)
    return cfg


def _load_eval_inputs(args):
    """Resolve ``(net, anchors, kind, dataset)`` from flags and an optional manifest."""
    cfg = _run_config(args)
    ckpt = args.checkpoint or (cfg and cfg.out_dir and str(Path(cfg.out_dir) / CHECKPOINT_NAME))
    if not ckpt:
        raise ConfigError("give --checkpoint or --config pointing at a run manifest")
    net = checkpoint.load(ckpt)

    anchors_path = args.anchors
    if anchors_path is None and cfg is not None and cfg.uses_anchors:
        anchors_path = cfg.anchors_file or str(Path(cfg.out_dir) / ANCHORS_NAME)
    aset = anchor_mod.load_csv(anchors_path) if anchors_path else None

    loss = args.loss or (cfg.loss if cfg else ("encm" if aset is not None else "softmax"))
    if loss not in config.LOSSES:
        raise ConfigError(f"--loss must be one of {tuple(config.LOSSES)}")
    kind = config.LOSSES[loss]
    if kind == "softmax" and net.head is None:
        raise ConfigError("checkpoint has no classification head; pass --loss encm or cncm with --anchors")
    if kind != "softmax" and aset is None:
        raise ConfigError(f"--loss {loss} needs --anchors")
    if aset is not None and aset.dim != net.feature_dim:
        raise ConfigError(f"anchor dim {aset.dim} does not match feature dim {net.feature_dim}")

    dataset = _load_dataset(args, cfg)
    if dataset.sample_shape != tuple(net.input_shape):
        raise ConfigError(f"dataset samples {dataset.sample_shape} do not match network input {net.input_shape}")
    if aset is not None and dataset.num_classes > aset.num_classes:
        raise ConfigError(f"dataset has {dataset.num_classes} classes but only {aset.num_classes} anchors")
    return net, aset, kind, dataset


def _load_dataset(args, cfg):
    if args.data_csv:
        ds = data.load_csv(args.data_csv)
    elif args.images or args.labels:
        if not (args.images and args.labels):
            raise ConfigError("give both --images and --labels")
        ds = data.load_idx(args.images, args.labels)
    elif cfg is not None:
        train_ds, test_ds = config.load_datasets(cfg)
        if args.split == "test":
            if test_ds is None:
                raise ConfigError("the run has no test split; use --split train")
            return test_ds
        return train_ds
    else:
        raise ConfigError("no dataset: give --config, --data-csv or --images/--labels")
    if (args.norm_mean is None) != (args.norm_std is None):
        raise ConfigError("give both --norm-mean and --norm-std")
    if args.norm_mean is not None:
        ds = data.normalize_global(ds, (args.norm_mean, args.norm_std))
    return ds


def _own_anchor_distances(features, aset, labels):
    own = aset.by_class[labels]
    out = {}
    for kind in metrics.METRICS:
        out[kind] = np.array([metrics.evaluate(kind, f, a).value for f, a in zip(features, own)])
    return out


# -- eval -----------------------------------------------------------------------------


def cmd_eval(args):
    net, aset, kind, ds = _load_eval_inputs(args)
    features = train.extract_features(net, ds.samples)
    pred = train.decide(net, aset, kind, features)
    correct = pred == ds.labels
    lines = [
        f"samples={len(ds)}",
        f"decision={kind}",
        f"error_rate_pct={100.0 * (1.0 - float(np.mean(correct))):.4f}",
    ]
    for c in range(ds.num_classes):
        mask = ds.labels == c
        acc = float(np.mean(correct[mask])) if mask.any() else math.nan
        lines.append(f"class_{c}_accuracy=" + ("n/a" if math.isnan(acc) else f"{acc:.6f}"))
    if aset is not None:
        for name, dist in _own_anchor_distances(features, aset, ds.labels).items():
            lines.append(f"mean_anchor_distance_{name}={float(np.mean(dist))!r}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK


# -- export-features ----------------------------------------------------------------


def cmd_export_features(args):
    net, _, _, ds = _load_eval_inputs(args)
    features = train.extract_features(net, ds.samples)
    write_features_csv(args.out, features, ds.labels)
    print(f"wrote {len(ds)} rows to {args.out}")
    return EXIT_OK


def write_features_csv(path, features, labels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"feat_{j}" for j in range(features.shape[1])])
        for label, row in zip(labels, features):
            w.writerow([int(label)] + [repr(float(v)) for v in row])


def read_features_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["label"]:
        raise ConfigError(f"{path}: missing 'label,feat_0,...' header")
    labels = np.array([int(r[0]) for r in rows[1:]], dtype=np.int64)
    feats = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    return feats.reshape(len(labels), len(rows[0]) - 1), labels


# -- plot --------------------------------------------------------------------------------


PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)
CANVAS = 600
MARGIN = 30


def _star(cx, cy, r_out=9.0, r_in=4.0):
    pts = []
    for k in range(10):
        r = r_out if k % 2 == 0 else r_in
        t = math.pi / 2 + k * math.pi / 5
        pts.append(f"{cx + r * math.cos(t):.3f},{cy - r * math.sin(t):.3f}")
    return " ".join(pts)


def render_svg(features, labels, anchor_rows=None, anchor_classes=None, anchor_scale=1.0):
    """Deterministic SVG scatter; anchors are drawn as stars at ``anchor_scale * row``."""
    stars = None
    if anchor_rows is not None:
        stars = anchor_scale * np.asarray(anchor_rows, dtype=np.float64)
    pts = features if stars is None else np.vstack([features, stars])
    if len(pts):
        lo, hi = pts.min(axis=0), pts.max(axis=0)
    else:
        lo, hi = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-12))
    scale = (CANVAS - 2 * MARGIN) / span

    def xy(p):
        return MARGIN + (p[0] - lo[0]) * scale, CANVAS - MARGIN - (p[1] - lo[1]) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">',
        f'<rect width="{CANVAS}" height="{CANVAS}" fill="white"/>',
    ]
    for p, c in zip(features, labels):
        x, y = xy(p)
        out.append(
            f'<circle class="point" data-class="{int(c)}" cx="{x:.3f}" cy="{y:.3f}" r="2" '
            f'fill="{PALETTE[int(c) % len(PALETTE)]}" fill-opacity="0.6"/>'
        )
    if stars is not None:
        for s, c in zip(stars, anchor_classes):
            x, y = xy(s)
            out.append(
                f'<polygon class="anchor" data-class="{int(c)}" data-x="{float(s[0])!r}" data-y="{float(s[1])!r}" '
                f'points="{_star(x, y)}" fill="{PALETTE[int(c) % len(PALETTE)]}" stroke="black" stroke-width="1"/>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(args):
    feats, labels = read_features_csv(args.features)
    if feats.shape[1] != 2:
        raise ConfigError(
            f"features are {feats.shape[1]}-D; plotting needs 2-D features "
            "(train with preset mnist-2dviz or feature_dim=2 and re-export)"
        )
    rows = classes = None
    if args.anchors:
        aset = anchor_mod.load_csv(args.anchors)
        if aset.dim != 2:
            raise ConfigError(f"anchors are {aset.dim}-D; plotting needs 2-D anchors")
        rows, classes = aset.anchors, aset.class_of_row
    Path(args.out).write_text(render_svg(feats, labels, rows, classes, args.anchor_scale))
    print(f"wrote {args.out}")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------------


def _add_eval_args(p):
    p.add_argument("--config", help="run manifest (or config) to take checkpoint, anchors and data from")
    p.add_argument("--split", choices=("train", "test"), default="test", help="split to use with --config")
    p.add_argument("--checkpoint")
    p.add_argument("--anchors", help="anchors CSV")
    p.add_argument("--loss", help="decision rule: encm, cncm or softmax")
    p.add_argument("--data-csv", help="dataset as label,dim_0,... CSV")
    p.add_argument("--images", help="IDX images file")
    p.add_argument("--labels", help="IDX labels file")
    p.add_argument("--norm-mean", type=float)
    p.add_argument("--norm-std", type=float)


def build_parser():
    ap = argparse.ArgumentParser(prog="ancm", description="Anchor-based nearest class mean losses.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-anchors", help="generate and validate an anchor set")
    p.add_argument("--method", required=True, choices=config.ANCHOR_METHODS)
    p.add_argument("--classes", required=True, type=int)
    p.add_argument("--dim", type=int, help="anchor dimension (polar2d: 2)")
    p.add_argument("--seed", type=int, help=f"repulsion seed (default ${config.SEED_ENV} or 0)")
    p.add_argument("--theta-m", type=float, default=0.0, help="required min pairwise angle, degrees")
    p.add_argument("--out", default=ANCHORS_NAME)
    p.set_defaults(func=cmd_gen_anchors)

    p = sub.add_parser("train", help="train from a key=value config; flags override the file")
    p.add_argument("--config", help="key=value config or a previous run manifest")
    for key in config.keys():
        p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="error rate, per-class accuracy and anchor distances")
    _add_eval_args(p)
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-features", help="write eval-mode features as CSV")
    _add_eval_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_features)

    p = sub.add_parser("plot", help="SVG scatter of 2-D features with anchors as stars")
    p.add_argument("--features", required=True)
    p.add_argument("--anchors")
    p.add_argument("--out", required=True)
    p.add_argument("--anchor-scale", type=float, default=1.0, help="display-only anchor magnification")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        # ConfigError, DimensionError, ParseError, ... all derive from ValueError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
