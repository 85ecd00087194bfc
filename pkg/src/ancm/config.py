"""Run configuration: a plain ``key=value`` file, overridable by flags.

Blank lines and lines starting with ``#`` are ignored. An empty value means
"unset". Every key has a matching command-line flag (``max_epochs`` becomes
``--max-epochs``), and flags win over the file. When no seed is given
anywhere, the ``ANCM_SEED`` environment variable is used, then 0.

The resolved configuration is written back out as the run manifest; feeding
the manifest to ``train`` again reproduces the run exactly.
"""

import os
from dataclasses import dataclass, fields
from pathlib import Path

from . import anchors as anchor_mod
from . import data as data_mod
from .errors import ConfigError, DimensionError
from .network import PRESETS, init_network, preset_layers
from .optim import PlateauRule, TrainConfig

LOSSES = {"encm": "euclidean", "cncm": "cosine", "softmax": "softmax"}
ANCHOR_METHODS = ("polar2d", "orthonormal", "repulsion")
DATASETS = ("blobs", "idx")

SEED_ENV = "ANCM_SEED"


@dataclass
class RunConfig:
    # data
    dataset: str = "blobs"
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    num_classes: int = 0
    normalize: str = "auto"
    blobs_classes: int = 4
    blobs_dim: int = 2
    blobs_per_class: int = 100
    blobs_test_per_class: int = 0
    blobs_spread: float = 0.3
    blobs_separation: float = 3.0
    # model
    preset: str = "toy2d"
    feature_dim: int = 0
    width: int = 16
    loss: str = "encm"
    anchor_method: str = ""
    anchors_file: str = ""
    anchor_seed: int = 0
    # optimizer
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 64
    max_epochs: int = 20
    dropout: float = 0.0
    plateau_window: int = 5
    plateau_min_rel: float = 1e-3
    plateau_factor: float = 10.0
    augment: bool = False
    pad: int = 4
    flip_prob: float = 0.5
    seed: int = None
    # output
    out_dir: str = ""
    timing: bool = False

    @property
    def kind(self):
        return LOSSES[self.loss]

    @property
    def uses_anchors(self):
        return self.loss != "softmax"

    @property
    def normalize_inputs(self):
        if self.normalize == "auto":
            return self.dataset == "idx"
        return self.normalize == "true"

    def train_config(self):
        try:
            return TrainConfig(
                lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay,
                batch_size=self.batch_size, max_epochs=self.max_epochs, dropout=self.dropout,
                seed=self.seed,
                plateau=PlateauRule(self.plateau_window, self.plateau_min_rel, self.plateau_factor),
                augment=self.augment, pad=self.pad, flip_prob=self.flip_prob,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def validate(self, need_out_dir=True):
        """Check value ranges, cross-key rules and that input paths exist."""
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {tuple(LOSSES)}, got {self.loss!r}")
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        if self.normalize not in ("auto", "true", "false"):
            raise ConfigError(f"normalize must be auto, true or false, got {self.normalize!r}")
        if self.loss == "softmax":
            if self.anchor_method or self.anchors_file:
                raise ConfigError("loss=softmax does not use anchors; remove anchor_method/anchors_file")
        elif not (self.anchor_method or self.anchors_file):
            raise ConfigError(f"loss={self.loss} needs anchor_method or anchors_file")
        if self.anchor_method and self.anchors_file:
            raise ConfigError("give either anchor_method or anchors_file, not both")
        if self.anchor_method and self.anchor_method not in ANCHOR_METHODS:
            raise ConfigError(f"anchor_method must be one of {ANCHOR_METHODS}, got {self.anchor_method!r}")
        if self.dataset == "idx":
            if not (self.train_images and self.train_labels):
                raise ConfigError("dataset=idx needs train_images and train_labels")
            if bool(self.test_images) != bool(self.test_labels):
                raise ConfigError("give both test_images and test_labels, or neither")
        else:
            for key in ("blobs_classes", "blobs_dim", "blobs_per_class"):
                if getattr(self, key) < 1:
                    raise ConfigError(f"{key} must be >= 1")
            if self.blobs_test_per_class < 0:
                raise ConfigError("blobs_test_per_class must be >= 0")
            if not self.blobs_spread > 0:
                raise ConfigError("blobs_spread must be positive")
        for key in ("train_images", "train_labels", "test_images", "test_labels", "anchors_file"):
            path = getattr(self, key)
            if path and not Path(path).is_file():
                raise ConfigError(f"{key}: no such file {path!r}")
        if self.feature_dim < 1 or self.width < 1:
            raise ConfigError("feature_dim and width must be >= 1")
        if self.num_classes < 0:
            raise ConfigError("num_classes must be >= 0 (0 infers it from the labels)")
        if need_out_dir and not self.out_dir:
            raise ConfigError("out_dir is required")
        self.train_config()
        return self


# -- parsing -------------------------------------------------------------------


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _field_type(name):
    default = _FIELDS[name].default
    if name == "seed":
        return int
    return type(default)


def _convert(name, text):
    kind = _field_type(name)
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def keys():
    return tuple(_FIELDS)


def parse_text(text, source="<config>"):
    """Parse ``key=value`` lines into a dict of raw strings."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def resolve(file_values=None, overrides=None, env=None):
    """Build a :class:`RunConfig` from file values, then flag overrides.

    Both mappings hold strings (or ``None`` for "not given"); empty strings
    mean unset. The seed falls back to ``env[ANCM_SEED]`` and then 0.
    """
    env = os.environ if env is None else env
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    kwargs = {}
    for key, value in merged.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        value = str(value)
        if value.strip() == "":
            continue
        kwargs[key] = _convert(key, value)
    if "seed" not in kwargs:
        raw = env.get(SEED_ENV, "").strip()
        if raw:
            try:
                kwargs["seed"] = int(raw)
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
        else:
            kwargs["seed"] = 0
    cfg = RunConfig(**kwargs)
    if not cfg.feature_dim:
        cfg.feature_dim = 64 if cfg.preset == "mnist-mini" else 2
    return cfg


def load(path, overrides=None, env=None):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return resolve(parse_text(text, str(path)), overrides, env)


def to_manifest(cfg):
    """Every key, one per line, in declaration order."""
    lines = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{name}={value}")
    return "\n".join(lines) + "\n"


# -- building run objects ----------------------------------------------------------


def load_datasets(cfg):
    """Returns ``(train, test)``; ``test`` may be ``None``."""
    if cfg.dataset == "idx":
        n = cfg.num_classes or None
        train = data_mod.load_idx(cfg.train_images, cfg.train_labels, n)
        test = None
        if cfg.test_images:
            test = data_mod.load_idx(cfg.test_images, cfg.test_labels, train.num_classes)
    else:
        centers = data_mod.blob_centers(cfg.blobs_classes, cfg.blobs_dim, cfg.blobs_separation, cfg.seed)
        train = data_mod.make_blobs(cfg.blobs_classes, cfg.blobs_dim, cfg.blobs_per_class,
                                    centers, cfg.blobs_spread, seed=cfg.seed)
        test = None
        if cfg.blobs_test_per_class:
            test = data_mod.make_blobs(cfg.blobs_classes, cfg.blobs_dim, cfg.blobs_test_per_class,
                                       centers, cfg.blobs_spread, seed=[cfg.seed, 1])
    if cfg.normalize_inputs:
        train = data_mod.normalize_global(train)
        if test is not None:
            test = data_mod.normalize_global(test, train.norm_stats)
    return train, test


def build_network(cfg, input_shape, num_classes):
    try:
        layers = preset_layers(cfg.preset, input_shape, cfg.feature_dim, cfg.dropout, cfg.width)
    except DimensionError as exc:
        raise ConfigError(str(exc)) from None
    head = num_classes if cfg.loss == "softmax" else None
    return init_network(layers, input_shape, seed=cfg.seed, head_classes=head)


def build_anchors(cfg, num_classes, dim):
    """Anchor set for the run, or ``None`` for softmax."""
    if not cfg.uses_anchors:
        return None
    if cfg.anchors_file:
        aset = anchor_mod.load_csv(cfg.anchors_file)
    else:
        aset = generate_anchors(cfg.anchor_method, num_classes, dim, cfg.anchor_seed)
    if aset.num_classes != num_classes or aset.dim != dim:
        raise ConfigError(
            f"anchors are {aset.num_classes} x {aset.dim}, run needs {num_classes} x {dim}"
        )
    return aset


def generate_anchors(method, num_classes, dim, seed=0):
    try:
        if method == "polar2d":
            if dim != 2:
                raise ValueError(f"polar2d anchors are 2-D, requested dim {dim}")
            return anchor_mod.generate_polar_2d(num_classes)
        if method == "orthonormal":
            return anchor_mod.generate_orthonormal(num_classes, dim)
        if method == "repulsion":
            return anchor_mod.generate_repulsion(num_classes, dim, seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"anchor method must be one of {ANCHOR_METHODS}, got {method!r}")


