"""From-scratch convolutional feature extractor with per-layer activation taps.

The network is a fixed small architecture with seeded random (He-scaled)
filters. Activations are tapped after every ReLU and after the dense layer;
those tapped vectors feed the detector's layer-wise statistics. Conv filters
can be disabled at inference time via a FilterMask (selective dropout).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .imagecore import FormatError, Image
from .seeds import rng_from

_MAGIC = b"FNET1"
_KIND_CODES = {"conv": 0, "relu": 1, "maxpool": 2, "flatten": 3, "dense": 4, "l2norm": 5}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class LayerDef:
    kind: str
    weights: np.ndarray | None = None   # conv: (out, in, k, k); dense: (out, in)
    bias: np.ndarray | None = None
    stride: int = 1
    pad: int = 0
    window: int = 2

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv":
            if self.weights is None or self.weights.ndim != 4:
                raise ValueError("conv layer needs (out, in, k, k) weights")
            if self.bias is None or self.bias.shape != (self.weights.shape[0],):
                raise ValueError("conv bias shape mismatch")
            if self.stride < 1 or self.pad < 0:
                raise ValueError("bad conv stride/pad")
        elif self.kind == "dense":
            if self.weights is None or self.weights.ndim != 2:
                raise ValueError("dense layer needs (out, in) weights")
            if self.bias is None or self.bias.shape != (self.weights.shape[0],):
                raise ValueError("dense bias shape mismatch")


@dataclass(frozen=True)
class FilterMask:
    """Set of (conv_ordinal, filter_index) pairs disabled during forward."""

    disabled: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "disabled",
                           frozenset((int(a), int(b)) for a, b in self.disabled))

    def to_json_list(self) -> list:
        return sorted([a, b] for a, b in self.disabled)


@dataclass(frozen=True)
class NetworkModel:
    layers: tuple[LayerDef, ...]
    tap_points: tuple[int, ...]
    input_spec: tuple[int, int, int]    # (W, H, C)

    def __post_init__(self):
        taps = tuple(self.tap_points)
        if list(taps) != sorted(set(taps)) or (taps and taps[-1] >= len(self.layers)):
            raise ValueError("tap points must be strictly increasing layer indices")

    @property
    def n_taps(self) -> int:
        return len(self.tap_points)

    @property
    def conv_ordinals(self) -> tuple[int, ...]:
        """Indices into layers of each conv layer, in order."""
        return tuple(i for i, l in enumerate(self.layers) if l.kind == "conv")

    def conv_filter_counts(self) -> tuple[int, ...]:
        return tuple(self.layers[i].weights.shape[0] for i in self.conv_ordinals)

    def tap_lengths(self) -> tuple[int, ...]:
        """Flattened activation length at each tap, from shape arithmetic."""
        w, h, c = self.input_spec
        shape = (c, h, w)
        lengths = []
        for idx, layer in enumerate(self.layers):
            shape = _out_shape(layer, shape)
            if idx in self.tap_points:
                lengths.append(int(np.prod(shape)))
        return tuple(lengths)

    def validate_mask(self, mask: FilterMask) -> None:
        counts = self.conv_filter_counts()
        for layer_i, filt_j in mask.disabled:
            if not 0 <= layer_i < len(counts) or not 0 <= filt_j < counts[layer_i]:
                raise ValueError(f"mask entry ({layer_i}, {filt_j}) references no conv filter")


def _out_shape(layer: LayerDef, shape: tuple) -> tuple:
    if layer.kind == "conv":
        c, h, w = shape
        o, ci, k, _ = layer.weights.shape
        if ci != c:
            raise ValueError(f"conv expects {ci} input channels, got {c}")
        ho = (h + 2 * layer.pad - k) // layer.stride + 1
        wo = (w + 2 * layer.pad - k) // layer.stride + 1
        return (o, ho, wo)
    if layer.kind == "maxpool":
        c, h, w = shape
        return (c, (h - layer.window) // layer.stride + 1, (w - layer.window) // layer.stride + 1)
    if layer.kind == "flatten":
        return (int(np.prod(shape)),)
    if layer.kind == "dense":
        o, i = layer.weights.shape
        if shape != (i,):
            raise ValueError(f"dense expects input length {i}, got {shape}")
        return (o,)
    return shape  # relu / l2norm


@dataclass(frozen=True)
class LayerActivations:
    """Flattened activation vector per tapped layer, for one image."""

    vectors: tuple[np.ndarray, ...]

    @property
    def lengths(self) -> tuple[int, ...]:
        return tuple(len(v) for v in self.vectors)


def default_network(seed: int) -> NetworkModel:
    """Deterministic 64x64x1 architecture with He-scaled seeded Gaussian weights."""
    plan = [  # (out_filters, in_channels) per conv, pools interleaved
        (8, 1), (16, 8), (32, 16), (32, 32),
    ]
    layers: list[LayerDef] = []
    taps: list[int] = []
    for i, (out_f, in_c) in enumerate(plan):
        rng = rng_from(seed, 0xC04F, i)
        fan_in = in_c * 9
        w = rng.standard_normal((out_f, in_c, 3, 3)) * np.sqrt(2.0 / fan_in)
        layers.append(LayerDef("conv", w.astype(np.float32), np.zeros(out_f, np.float32),
                               stride=1, pad=1))
        layers.append(LayerDef("relu"))
        taps.append(len(layers) - 1)
        if i < 3:
            layers.append(LayerDef("maxpool", window=2, stride=2))
    layers.append(LayerDef("flatten"))
    rng = rng_from(seed, 0xDE45E)
    w = rng.standard_normal((64, 2048)) * np.sqrt(2.0 / 2048)
    layers.append(LayerDef("dense", w.astype(np.float32), np.zeros(64, np.float32)))
    taps.append(len(layers) - 1)
    layers.append(LayerDef("l2norm"))
    return NetworkModel(tuple(layers), tuple(taps), (64, 64, 1))


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def _conv2d(x: np.ndarray, layer: LayerDef) -> np.ndarray:
    w = layer.weights
    k = w.shape[2]
    p, s = layer.pad, layer.stride
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::s, ::s]
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, H', W', O)
    out = np.moveaxis(out, 3, 1)
    return out + layer.bias[None, :, None, None]


def _maxpool(x: np.ndarray, layer: LayerDef) -> np.ndarray:
    k, s = layer.window, layer.stride
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::s, ::s].max(axis=(-2, -1))


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization; all-zero rows pass through unchanged."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.where(norms > 0, x / np.where(norms > 0, norms, 1.0), x)


def forward_batch(model: NetworkModel, images: np.ndarray,
                  mask: FilterMask | None = None,
                  want_conv_maps: bool = False):
    """Run the network on a (N, H, W, C) uint8 batch.

    Returns (embeddings (N, D), taps: list of (N, lambda_i) float arrays[,
    conv_maps: list of post-ReLU (N, O, H', W') arrays per conv layer]).
    Masked filters contribute exactly zero output channels.
    """
    w_in, h_in, c_in = model.input_spec
    if images.ndim != 4 or images.shape[1:] != (h_in, w_in, c_in):
        raise ValueError(
            f"input batch shape {images.shape} does not match model input "
            f"{(h_in, w_in, c_in)}")
    if mask is not None:
        model.validate_mask(mask)
    disabled_by_conv: dict[int, list[int]] = {}
    if mask is not None:
        for li, fj in mask.disabled:
            disabled_by_conv.setdefault(li, []).append(fj)

    x = np.moveaxis(images, 3, 1).astype(np.float32) / 255.0  # (N, C, H, W)
    taps: list[np.ndarray] = []
    conv_maps: list[np.ndarray] = []
    conv_ord = -1
    for idx, layer in enumerate(model.layers):
        if layer.kind == "conv":
            conv_ord += 1
            x = _conv2d(x, layer)
            if conv_ord in disabled_by_conv:
                x[:, disabled_by_conv[conv_ord], :, :] = 0.0
        elif layer.kind == "relu":
            x = np.maximum(x, 0.0)
            if want_conv_maps:
                conv_maps.append(x)
        elif layer.kind == "maxpool":
            x = _maxpool(x, layer)
        elif layer.kind == "flatten":
            x = x.reshape(x.shape[0], -1)
        elif layer.kind == "dense":
            x = x @ layer.weights.T + layer.bias
        else:  # l2norm
            x = l2_normalize(x)
        if idx in model.tap_points:
            taps.append(x.reshape(x.shape[0], -1))
    if want_conv_maps:
        return x, taps, conv_maps
    return x, taps


def forward(model: NetworkModel, img: Image,
            mask: FilterMask | None = None) -> tuple[np.ndarray, LayerActivations]:
    """Forward one image; returns (embedding, tapped activations)."""
    emb, taps = forward_batch(model, img.pixels[None], mask)
    return emb[0], LayerActivations(tuple(t[0].astype(np.float64) for t in taps))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


# ---------------------------------------------------------------------------
# Weight file (FNET1)
# ---------------------------------------------------------------------------

def save_weights(model: NetworkModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(model.layers)))
        w, h, c = model.input_spec
        fh.write(struct.pack("<III", w, h, c))
        fh.write(struct.pack("<I", len(model.tap_points)))
        fh.write(struct.pack(f"<{len(model.tap_points)}I", *model.tap_points))
        for layer in model.layers:
            fh.write(struct.pack("<B", _KIND_CODES[layer.kind]))
            if layer.kind == "conv":
                o, ci, k, _ = layer.weights.shape
                fh.write(struct.pack("<IIIII", o, ci, k, layer.stride, layer.pad))
                fh.write(layer.weights.astype("<f4").tobytes())
                fh.write(layer.bias.astype("<f4").tobytes())
            elif layer.kind == "maxpool":
                fh.write(struct.pack("<II", layer.window, layer.stride))
            elif layer.kind == "dense":
                o, i = layer.weights.shape
                fh.write(struct.pack("<II", o, i))
                fh.write(layer.weights.astype("<f4").tobytes())
                fh.write(layer.bias.astype("<f4").tobytes())


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated weight file while reading {what} "
                              f"at byte {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_weights(path) -> NetworkModel:
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    if rd.take(5, "magic") != _MAGIC:
        raise FormatError('bad magic, expected "FNET1"')
    n_layers = rd.u32("layer count")
    w_in = rd.u32("input width")
    h_in = rd.u32("input height")
    c_in = rd.u32("input channels")
    n_taps = rd.u32("tap count")
    taps = tuple(rd.u32("tap index") for _ in range(n_taps))
    layers = []
    for li in range(n_layers):
        code = rd.take(1, f"layer {li} kind")[0]
        if code not in _CODE_KINDS:
            raise FormatError(f"unknown layer kind code {code} at layer {li}")
        kind = _CODE_KINDS[code]
        if kind == "conv":
            o, ci, k, stride, pad = (rd.u32(f"layer {li} dims") for _ in range(5))
            wbytes = rd.take(o * ci * k * k * 4, f"layer {li} weights")
            bbytes = rd.take(o * 4, f"layer {li} bias")
            w = np.frombuffer(wbytes, "<f4").reshape(o, ci, k, k).copy()
            b = np.frombuffer(bbytes, "<f4").copy()
            layers.append(LayerDef("conv", w, b, stride=stride, pad=pad))
        elif kind == "maxpool":
            window = rd.u32(f"layer {li} window")
            stride = rd.u32(f"layer {li} stride")
            layers.append(LayerDef("maxpool", window=window, stride=stride))
        elif kind == "dense":
            o = rd.u32(f"layer {li} out")
            i = rd.u32(f"layer {li} in")
            wbytes = rd.take(o * i * 4, f"layer {li} weights")
            bbytes = rd.take(o * 4, f"layer {li} bias")
            layers.append(LayerDef("dense", np.frombuffer(wbytes, "<f4").reshape(o, i).copy(),
                                   np.frombuffer(bbytes, "<f4").copy()))
        else:
            layers.append(LayerDef(kind))
    return NetworkModel(tuple(layers), taps, (w_in, h_in, c_in))
