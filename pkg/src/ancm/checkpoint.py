"""Binary network checkpoints.

Layout (all integers little-endian u32)::

    b"ANCM"  version
    input_ndim  input_dims...
    n_layers  (len  utf8-spec)...
    has_head
    arrays...   each: ndim  dims...  float64-le payload

Arrays are layer parameters (layer by layer, sorted by name), then BatchNorm
running statistics in the same order, then the softmax head ``W``, ``b`` when
present.
"""

import struct

import numpy as np

from .errors import ParseError
from .network import Network, decode_spec, infer_shapes, init_network

MAGIC = b"ANCM"
VERSION = 1


def _arrays(net):
    for i, p in enumerate(net.params):
        for name in sorted(p):
            yield f"{i}.{name}", p[name]
    for i, s in enumerate(net.state):
        for name in sorted(s):
            yield f"{i}.{name}", s[name]


def to_bytes(net):
    out = [MAGIC, struct.pack("<I", VERSION)]
    out.append(struct.pack("<I", len(net.input_shape)))
    out.append(struct.pack(f"<{len(net.input_shape)}I", *net.input_shape))
    out.append(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        text = layer.encode().encode("utf-8")
        out.append(struct.pack("<I", len(text)))
        out.append(text)
    out.append(struct.pack("<I", int(net.head is not None)))
    arrays = [arr for _, arr in _arrays(net)]
    if net.head is not None:
        arrays += [net.head["W"], net.head["b"]]
    for arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise ParseError(
                f"truncated checkpoint: need {n} bytes for {what}, {len(self.data) - self.pos} left",
                self.pos,
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def from_bytes(data):
    r = _Reader(bytes(data))
    if r.take(4, "magic") != MAGIC:
        raise ParseError("not a checkpoint: bad magic", 0)
    version = r.u32("version")
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", 4)
    ndim = r.u32("input rank")
    input_shape = tuple(r.u32("input dim") for _ in range(ndim))
    n_layers = r.u32("layer count")
    layers = []
    for _ in range(n_layers):
        start = r.pos
        length = r.u32("spec length")
        text = r.take(length, "layer spec")
        try:
            layers.append(decode_spec(text.decode("utf-8")))
        except (UnicodeDecodeError, ValueError, TypeError) as exc:
            raise ParseError(f"bad layer spec {text!r}: {exc}", start) from None
    has_head_at = r.pos
    has_head = r.u32("head flag")
    if has_head not in (0, 1):
        raise ParseError(f"bad head flag {has_head}", has_head_at)
    try:
        shapes = infer_shapes(layers, input_shape)
    except ValueError as exc:
        raise ParseError(f"layer specs do not conform: {exc}", has_head_at) from None
    net = init_network(layers, input_shape, seed=0)
    values = {}
    for key, template in _arrays(net):
        values[key] = _read_array(r, key, template.shape)
    head = None
    if has_head:
        start = r.pos
        W = _read_array(r, "head.W", None)
        if W.ndim != 2 or W.shape[0] != shapes[-1][0]:
            raise ParseError(f"head weight has shape {W.shape}", start)
        b = _read_array(r, "head.b", (W.shape[1],))
        head = {"W": W, "b": b}
    if r.pos != len(r.data):
        raise ParseError(f"{len(r.data) - r.pos} trailing bytes after checkpoint payload", r.pos)

    params = [dict() for _ in layers]
    state = [dict() for _ in layers]
    for i, layer in enumerate(layers):
        for name in net.params[i]:
            params[i][name] = values[f"{i}.{name}"]
        for name in net.state[i]:
            state[i][name] = values[f"{i}.{name}"]
    return Network(layers, input_shape, params, state, head, shapes)


def _read_array(r, key, shape):
    start = r.pos
    ndim = r.u32(f"{key} rank")
    dims = tuple(r.u32(f"{key} dims") for _ in range(ndim))
    if shape is not None and dims != tuple(shape):
        raise ParseError(f"array {key} has shape {dims}, expected {tuple(shape)}", start)
    count = int(np.prod(dims)) if dims else 1
    payload = r.take(8 * count, f"{key} payload")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)


def save(net, path):
    with open(path, "wb") as fh:
        fh.write(to_bytes(net))


def load(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
