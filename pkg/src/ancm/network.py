"""Feature extractor: a layer stack with hand-written backpropagation.

Layer specs are small frozen dataclasses; each knows its output shape, how to
initialize its parameters, and how to run forward and backward on a batch.

Images enter and leave the network as ``N x C x H x W`` and flat inputs as
``N x d``. Internally image activations are kept channels-last
(``N x H x W x C``) so that convolution, pooling and BatchNorm work on
contiguous channel vectors; shapes in specs and ``Network.shapes`` are still
written ``(C, H, W)``. ``Flatten`` therefore emits features in ``(H, W, C)``
order.

A :class:`Network` owns the specs, the parameters (one dict per layer), the
BatchNorm running statistics, and optionally a linear classification head
used only by the softmax baseline.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import DimensionError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _colsum(a):
    # numpy's axis-0 reduction is slow for narrow (m, C) arrays; use gemv
    return np.ones(a.shape[0]) @ a


def _patches3x3(x):
    """``(B*H*W, 9*C)`` matrix of zero-padded 3x3 neighbourhoods of an NHWC tensor.

    Column order is ``(ky, kx, c)``.
    """
    B, H, W, C = x.shape
    xp = np.zeros((B, H + 2, W + 2, C))
    xp[:, 1:-1, 1:-1, :] = x
    s = xp.strides
    view = as_strided(xp, (B, H, W, 3, 3, C), (s[0], s[1], s[2], s[1], s[2], s[3]), writeable=False)
    return np.ascontiguousarray(view).reshape(B * H * W, 9 * C)


def _glorot(rng, shape, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class LayerSpec:
    """Base class for layer variants.

    Subclasses override what they need; the defaults describe a layer with
    no parameters that preserves its input shape.
    """

    def output_shape(self, in_shape):
        return in_shape

    def init_params(self, in_shape, rng):
        return {}

    def init_state(self):
        return {}

    def forward(self, x, params, state, train, rng):
        raise NotImplementedError

    def backward(self, cache, dy, params, need_dx=True):
        raise NotImplementedError

    def encode(self):
        args = " ".join(repr(v) for v in self.__dict__.values())
        return f"{type(self).__name__} {args}".strip()


@dataclass(frozen=True)
class Dense(LayerSpec):
    in_features: int
    out_features: int

    def output_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise DimensionError(f"Dense expects input ({self.in_features},), got {in_shape}")
        return (self.out_features,)

    def init_params(self, in_shape, rng):
        W = _glorot(rng, (self.in_features, self.out_features), self.in_features, self.out_features)
        return {"W": W, "b": np.zeros(self.out_features)}

    def forward(self, x, params, state, train, rng):
        return x @ params["W"] + params["b"], x

    def backward(self, x, dy, params, need_dx=True):
        dx = dy @ params["W"].T if need_dx else None
        return dx, {"W": x.T @ dy, "b": dy.sum(axis=0)}


@dataclass(frozen=True)
class Conv3x3(LayerSpec):
    """3x3 convolution, stride 1, zero padding 1."""

    in_channels: int
    out_channels: int

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise DimensionError(
                f"Conv3x3 expects ({self.in_channels}, H, W) input, got {in_shape}"
            )
        return (self.out_channels,) + tuple(in_shape[1:])

    def init_params(self, in_shape, rng):
        fan_in, fan_out = self.in_channels * 9, self.out_channels * 9
        W = _glorot(rng, (self.out_channels, self.in_channels, 3, 3), fan_in, fan_out)
        return {"W": W, "b": np.zeros(self.out_channels)}

    def _kernel(self, params):
        # (Cout, Cin, 3, 3) -> (3*3*Cin, Cout) matching the patch layout
        return params["W"].transpose(2, 3, 1, 0).reshape(-1, self.out_channels)

    def _flipped_kernel(self, params):
        # maps output-gradient patches back to the input: (3*3*Cout, Cin)
        return params["W"][:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(-1, self.in_channels)

    def forward(self, x, params, state, train, rng):
        B, H, W, _ = x.shape
        cols = _patches3x3(x)
        out = cols @ self._kernel(params) + params["b"]
        return out.reshape(B, H, W, self.out_channels), (cols, x.shape)

    def backward(self, cache, dy, params, need_dx=True):
        cols, (B, H, W, C) = cache
        dy2 = dy.reshape(-1, self.out_channels)
        dW = (cols.T @ dy2).reshape(3, 3, C, self.out_channels).transpose(3, 2, 0, 1)
        grads = {"W": np.ascontiguousarray(dW), "b": dy2.sum(axis=0)}
        if not need_dx:
            return None, grads
        # full correlation of dy with the flipped kernel
        dx = _patches3x3(dy.reshape(B, H, W, self.out_channels)) @ self._flipped_kernel(params)
        return dx.reshape(B, H, W, C), grads


@dataclass(frozen=True)
class MaxPool2x2(LayerSpec):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[1] < 2 or in_shape[2] < 2:
            raise DimensionError(f"MaxPool2x2 expects (C, H>=2, W>=2) input, got {in_shape}")
        return (in_shape[0], in_shape[1] // 2, in_shape[2] // 2)

    @staticmethod
    def _corners(a, H2, W2):
        # window positions in row-major order: (0,0), (0,1), (1,0), (1,1)
        return [a[:, dy:2 * H2:2, dx:2 * W2:2, :] for dy in (0, 1) for dx in (0, 1)]

    def forward(self, x, params, state, train, rng):
        B, H, W, C = x.shape
        H2, W2 = H // 2, W // 2
        corners = self._corners(x, H2, W2)
        out = np.maximum(np.maximum(corners[0], corners[1]), np.maximum(corners[2], corners[3]))
        # route to the first maximum in row-major order
        taken = np.zeros(out.shape, dtype=bool)
        masks = []
        for c in corners:
            m = (c == out) & ~taken
            taken |= m
            masks.append(m)
        return out, (masks, x.shape)

    def backward(self, cache, dy, params, need_dx=True):
        masks, shape = cache
        dx = np.zeros(shape)
        H2, W2 = dy.shape[1], dy.shape[2]
        for view, m in zip(self._corners(dx, H2, W2), masks):
            view[...] = dy * m
        return dx, {}


@dataclass(frozen=True)
class BatchNorm(LayerSpec):
    """Batch normalization over the batch (and spatial axes for images)."""

    channels: int

    def output_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise DimensionError(f"BatchNorm({self.channels}) got input {in_shape}")
        return in_shape

    def init_params(self, in_shape, rng):
        return {"gamma": np.ones(self.channels), "beta": np.zeros(self.channels)}

    def init_state(self):
        return {"running_mean": np.zeros(self.channels), "running_var": np.ones(self.channels)}

    def forward(self, x, params, state, train, rng):
        # channels are the last axis, so every input views as (m, C)
        x2 = x.reshape(-1, self.channels)
        if train:
            m = x2.shape[0]
            mean = _colsum(x2) / m
            centered = x2 - mean
            var = _colsum(centered * centered) / m
            state["running_mean"] = BN_MOMENTUM * state["running_mean"] + (1 - BN_MOMENTUM) * mean
            state["running_var"] = BN_MOMENTUM * state["running_var"] + (1 - BN_MOMENTUM) * var
        else:
            centered = x2 - state["running_mean"]
            var = state["running_var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        out = centered * (params["gamma"] * inv_std) + params["beta"]
        return out.reshape(x.shape), (centered, inv_std, train)

    def backward(self, cache, dy, params, need_dx=True):
        centered, inv_std, train = cache
        dy2 = dy.reshape(-1, self.channels)
        sum_dy = _colsum(dy2)
        sum_dy_xhat = _colsum(dy2 * centered) * inv_std
        grads = {"gamma": sum_dy_xhat, "beta": sum_dy}
        scale = params["gamma"] * inv_std
        if not train:
            return (dy2 * scale).reshape(dy.shape), grads
        m = dy2.shape[0]
        # dx = scale/m * (m*dy - sum(dy) - xhat*sum(dy*xhat)) with xhat = centered*inv_std
        dx = dy2 * scale - (scale * sum_dy / m) - centered * (scale * inv_std * sum_dy_xhat / m)
        return dx.reshape(dy.shape), grads


@dataclass(frozen=True)
class ReLU(LayerSpec):
    def forward(self, x, params, state, train, rng):
        out = np.maximum(x, 0.0)
        return out, out

    def backward(self, out, dy, params, need_dx=True):
        return np.where(out > 0, dy, 0.0), {}


@dataclass(frozen=True)
class Dropout(LayerSpec):
    """Inverted dropout: survivors are scaled by ``1/(1-p)`` at train time."""

    p: float

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"dropout ratio must be in [0, 1), got {self.p}")

    def forward(self, x, params, state, train, rng):
        if not train or self.p == 0.0:
            return x, None
        if rng is None:
            raise ValueError("train-mode dropout needs a random generator")
        mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * mask, mask

    def backward(self, mask, dy, params, need_dx=True):
        return (dy if mask is None else dy * mask), {}


@dataclass(frozen=True)
class Flatten(LayerSpec):
    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, params, state, train, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, shape, dy, params, need_dx=True):
        return dy.reshape(shape), {}


LAYER_TYPES = {cls.__name__: cls for cls in (Dense, Conv3x3, MaxPool2x2, BatchNorm, ReLU, Dropout, Flatten)}


def decode_spec(text):
    name, *args = text.split()
    if name not in LAYER_TYPES:
        raise ValueError(f"unknown layer type {name!r}")
    cls = LAYER_TYPES[name]
    if cls is Dropout:
        return cls(*(float(a) for a in args))
    return cls(*(int(a) for a in args))


@dataclass
class ForwardTrace:
    caches: list
    activations_finite: list
    mode: str


@dataclass
class Network:
    layers: list
    input_shape: tuple
    params: list
    state: list
    head: dict = None
    shapes: list = field(default_factory=list)

    @property
    def feature_dim(self):
        return self.shapes[-1][0]

    def named_params(self):
        """``(key, array)`` pairs in a fixed order; keys look like ``'3.W'``."""
        for i, p in enumerate(self.params):
            for name in sorted(p):
                yield f"{i}.{name}", p[name]
        if self.head is not None:
            for name in ("W", "b"):
                yield f"head.{name}", self.head[name]

    def set_param(self, key, value):
        owner, name = key.split(".")
        if owner == "head":
            self.head[name] = value
        else:
            self.params[int(owner)][name] = value

    def forward(self, x, mode="eval", rng=None):
        """Run the stack; returns ``(features, trace)``."""
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = np.asarray(x, dtype=np.float64)
        if tuple(x.shape[1:]) != tuple(self.input_shape):
            raise DimensionError(
                f"layer 0 ({self.layers[0].encode() if self.layers else 'input'}): "
                f"expected input (N, {', '.join(map(str, self.input_shape))}), got {x.shape}"
            )
        train = mode == "train"
        if x.ndim == 4:
            x = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        caches, finite = [], []
        for i, layer in enumerate(self.layers):
            x, cache = layer.forward(x, self.params[i], self.state[i], train, rng)
            caches.append(cache)
            finite.append(bool(np.all(np.isfinite(x))))
        if x.ndim == 4:
            x = x.transpose(0, 3, 1, 2)
        return x, ForwardTrace(caches, finite, mode)

    def backward(self, trace, feature_grad, input_grad=True):
        """Returns ``(param_grads, input_grad)``.

        ``param_grads`` is keyed like :meth:`named_params`. With
        ``input_grad=False`` the gradient with respect to the network input is
        skipped and ``None`` is returned in its place.
        """
        if len(trace.caches) != len(self.layers):
            raise ValueError(
                f"trace has {len(trace.caches)} layers but the network has {len(self.layers)}"
            )
        grads = {}
        dy = np.asarray(feature_grad, dtype=np.float64)
        if dy.ndim == 4:
            dy = np.ascontiguousarray(dy.transpose(0, 2, 3, 1))
        for i in range(len(self.layers) - 1, -1, -1):
            need_dx = input_grad or i > 0
            dy, g = self.layers[i].backward(trace.caches[i], dy, self.params[i], need_dx=need_dx)
            for name, value in g.items():
                grads[f"{i}.{name}"] = value
        if dy is not None and dy.ndim == 4:
            dy = dy.transpose(0, 3, 1, 2)
        return grads, dy

    def copy(self):
        return Network(
            list(self.layers),
            tuple(self.input_shape),
            [{k: v.copy() for k, v in p.items()} for p in self.params],
            [{k: v.copy() for k, v in s.items()} for s in self.state],
            None if self.head is None else {k: v.copy() for k, v in self.head.items()},
            list(self.shapes),
        )

    def first_nonfinite_layer(self, trace):
        for i, ok in enumerate(trace.activations_finite):
            if not ok:
                return f"layer {i} ({self.layers[i].encode()})"
        return None


def infer_shapes(layers, input_shape):
    shapes = [tuple(input_shape)]
    for i, layer in enumerate(layers):
        try:
            shapes.append(tuple(layer.output_shape(shapes[-1])))
        except DimensionError as exc:
            raise DimensionError(f"layer {i} ({layer.encode()}): {exc}") from None
    return shapes


def init_network(layers, input_shape, seed=0, head_classes=None):
    """Build a network with freshly initialized parameters.

    Weights are uniform in ``+-sqrt(6 / (fan_in + fan_out))``, biases zero,
    BatchNorm scale 1 and shift 0. ``head_classes`` adds a linear softmax
    head on top of the features.
    """
    layers = list(layers)
    shapes = infer_shapes(layers, input_shape)
    rng = np.random.default_rng(seed)
    params = [layer.init_params(shapes[i], rng) for i, layer in enumerate(layers)]
    state = [layer.init_state() for layer in layers]
    head = None
    if head_classes is not None:
        d = shapes[-1][0]
        head = {"W": _glorot(rng, (d, head_classes), d, head_classes), "b": np.zeros(head_classes)}
    return Network(layers, tuple(input_shape), params, state, head, shapes)


def is_decayed(key):
    """Weight decay applies to weight matrices and kernels only."""
    return key.endswith(".W")


PRESETS = ("toy2d", "mnist-mini", "mnist-2dviz")


def _conv_block(cin, cout):
    return [Conv3x3(cin, cout), BatchNorm(cout), ReLU()]


def preset_layers(name, input_shape, feature_dim=None, dropout=0.0, width=16):
    """Layer lists for the named architecture presets.

    ``toy2d`` is a small MLP for flat inputs. ``mnist-mini`` and
    ``mnist-2dviz`` are scaled-down image nets: conv block, pool, dropout,
    two conv blocks, pool, dropout, flatten, dense feature layer (64-d and
    2-d by default respectively).
    """
    if name == "toy2d":
        if len(input_shape) != 1:
            raise DimensionError(f"toy2d expects flat inputs, got shape {input_shape}")
        d = feature_dim or 2
        return [Dense(input_shape[0], 32), ReLU(), Dense(32, 32), ReLU(), Dense(32, d)]
    if name in ("mnist-mini", "mnist-2dviz"):
        if len(input_shape) != 3:
            raise DimensionError(f"{name} expects (C, H, W) inputs, got shape {input_shape}")
        c, h, w = input_shape
        d = feature_dim or (64 if name == "mnist-mini" else 2)
        layers = _conv_block(c, width) + [MaxPool2x2(), Dropout(dropout)]
        layers += _conv_block(width, width) + _conv_block(width, width)
        layers += [MaxPool2x2(), Dropout(dropout), Flatten()]
        layers.append(Dense(width * (h // 2 // 2) * (w // 2 // 2), d))
        return layers
    raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")
