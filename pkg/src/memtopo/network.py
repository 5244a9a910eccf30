"""Network specifications, the two classification backbones, and a runtime
that runs them either through the analogue crossbar path or as a plain
digital reference.

Weighted layers store their matrices in bank orientation (rows = input
dimension, cols = output dimension). A convolution kernel (O, C, kh, kw)
maps to a (C*kh*kw, O) bank driven by im2col patches; a fully connected
(out, in) matrix maps to an (in, out) bank; the recurrent layer owns two
banks (input->hidden and hidden->hidden).

The recurrent layer consumes a (N, C, H, W) feature map as H time steps:
x_t is the channel vector of row t averaged across the width, and the layer
output is the mean hidden state over all steps.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .device import DifferentialPairBank
from .errors import ArgumentError, DimensionError
from .vmm import QuantizationSpec, quantize_input, vmm_bit_sliced


class LayerKind(str, enum.Enum):
    CONV2D = "Conv2d"
    MAXPOOL2X2 = "MaxPool2x2"
    RELU = "Relu"
    TANH = "Tanh"
    FULLY_CONNECTED = "FullyConnected"
    RECURRENT = "Recurrent"
    FLATTEN = "Flatten"
    SOFTMAX_XENT = "SoftmaxXent"
    CROP_TO_EVEN = "CropToEven"


@dataclass
class LayerSpec:
    """kind plus kind-specific dims.

    Conv2d: [out_ch, in_ch, kh, kw]; FullyConnected: [out, in];
    Recurrent: [hidden, in]; the rest take no dims.
    """

    kind: LayerKind
    dims: list[int] = field(default_factory=list)

    def __post_init__(self):
        if any(d < 1 for d in self.dims):
            raise ArgumentError(f"layer dims must be >= 1, got {self.dims}")


@dataclass
class NetworkSpec:
    name: str
    layers: list[LayerSpec]
    scale_factor: float
    input_shape: tuple[int, int, int]  # (C, H, W)
    class_count: int = 10

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "scale": self.scale_factor,
            "input_shape": list(self.input_shape),
            "class_count": self.class_count,
            "layers": [{"kind": l.kind.value, "dims": l.dims} for l in self.layers],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        doc = json.loads(text)
        return cls(
            name=doc["name"],
            layers=[LayerSpec(LayerKind(l["kind"]), list(l["dims"]))
                    for l in doc["layers"]],
            scale_factor=doc["scale"],
            input_shape=tuple(doc["input_shape"]),
            class_count=doc["class_count"],
        )


def _scaled(n: int, scale: float) -> int:
    return max(1, math.ceil(n * scale))


def propagate_shapes(spec: NetworkSpec) -> list[tuple]:
    """Shape of the activation after every layer; rejects any mismatch."""
    shape = spec.input_shape
    shapes = []
    for layer in spec.layers:
        k = layer.kind
        if k == LayerKind.CONV2D:
            o, c, kh, kw = layer.dims
            if len(shape) != 3 or shape[0] != c:
                raise DimensionError(f"conv expects ({c}, H, W), got {shape}")
            if shape[1] < kh or shape[2] < kw:
                raise DimensionError(f"kernel {kh}x{kw} exceeds input {shape}")
            shape = (o, shape[1] - kh + 1, shape[2] - kw + 1)
        elif k == LayerKind.MAXPOOL2X2:
            if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
                raise DimensionError(f"maxpool2x2 needs even dims, got {shape}")
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif k == LayerKind.CROP_TO_EVEN:
            if len(shape) != 3:
                raise DimensionError(f"crop expects (C, H, W), got {shape}")
            shape = (shape[0], shape[1] - shape[1] % 2, shape[2] - shape[2] % 2)
        elif k in (LayerKind.RELU, LayerKind.TANH):
            pass
        elif k == LayerKind.FLATTEN:
            shape = (int(np.prod(shape)),)
        elif k == LayerKind.FULLY_CONNECTED:
            out, inp = layer.dims
            if shape != (inp,):
                raise DimensionError(f"fc expects ({inp},), got {shape}")
            shape = (out,)
        elif k == LayerKind.RECURRENT:
            hidden, inp = layer.dims
            if len(shape) != 3 or shape[0] != inp:
                raise DimensionError(f"recurrent expects ({inp}, T, W), got {shape}")
            shape = (hidden,)
        elif k == LayerKind.SOFTMAX_XENT:
            pass
        else:  # pragma: no cover
            raise ArgumentError(f"unknown layer kind {k}")
        shapes.append(shape)
    return shapes


def parameter_count(spec: NetworkSpec) -> int:
    total = 0
    for layer in spec.layers:
        if layer.kind == LayerKind.CONV2D:
            o, c, kh, kw = layer.dims
            total += o * c * kh * kw
        elif layer.kind == LayerKind.FULLY_CONNECTED:
            out, inp = layer.dims
            total += out * inp
        elif layer.kind == LayerKind.RECURRENT:
            hidden, inp = layer.dims
            total += hidden * inp + hidden * hidden
    return total


def build_cnn(scale: float = 1.0, input_hw: int = 14,
              class_count: int = 10) -> NetworkSpec:
    """Four-layer CNN: two 3x3 convs, 2x2 maxpool, two dense layers."""
    if scale <= 0:
        raise ArgumentError("scale must be > 0")
    c1 = _scaled(64, scale)
    c2 = _scaled(16, scale)
    f1 = _scaled(128, scale)
    h = input_hw - 2 - 2  # two valid 3x3 convs
    if h < 2 or h % 2:
        raise DimensionError(f"input {input_hw} incompatible with the conv stack")
    flat = c2 * (h // 2) * (h // 2)
    layers = [
        LayerSpec(LayerKind.CONV2D, [c1, 1, 3, 3]),
        LayerSpec(LayerKind.RELU),
        LayerSpec(LayerKind.CONV2D, [c2, c1, 3, 3]),
        LayerSpec(LayerKind.RELU),
        LayerSpec(LayerKind.MAXPOOL2X2),
        LayerSpec(LayerKind.FLATTEN),
        LayerSpec(LayerKind.FULLY_CONNECTED, [f1, flat]),
        LayerSpec(LayerKind.RELU),
        LayerSpec(LayerKind.FULLY_CONNECTED, [class_count, f1]),
    ]
    return NetworkSpec("cnn", layers, scale, (1, input_hw, input_hw), class_count)


def build_crnn(scale: float = 1.0, input_hw: tuple[int, int] = (23, 15),
               class_count: int = 10) -> NetworkSpec:
    """Five-layer CRNN: two convs with pooling, a tanh recurrent layer over
    the rows of the final feature map, then two dense layers."""
    if scale <= 0:
        raise ArgumentError("scale must be > 0")
    c1 = _scaled(64, scale)
    c2 = _scaled(32, scale)
    hidden = _scaled(128, scale)
    f1 = _scaled(256, scale)
    ih, iw = input_hw
    layers: list[LayerSpec] = []
    shape = (1, ih, iw)

    def add_conv(out_ch):
        nonlocal shape
        layers.append(LayerSpec(LayerKind.CONV2D, [out_ch, shape[0], 3, 2]))
        shape = (out_ch, shape[1] - 2, shape[2] - 1)
        layers.append(LayerSpec(LayerKind.RELU))
        if shape[1] % 2 or shape[2] % 2:
            layers.append(LayerSpec(LayerKind.CROP_TO_EVEN))
            shape = (shape[0], shape[1] - shape[1] % 2, shape[2] - shape[2] % 2)
        layers.append(LayerSpec(LayerKind.MAXPOOL2X2))
        shape = (shape[0], shape[1] // 2, shape[2] // 2)

    add_conv(c1)
    add_conv(c2)
    layers.append(LayerSpec(LayerKind.RECURRENT, [hidden, c2]))
    layers.append(LayerSpec(LayerKind.FULLY_CONNECTED, [f1, hidden]))
    layers.append(LayerSpec(LayerKind.RELU))
    layers.append(LayerSpec(LayerKind.FULLY_CONNECTED, [class_count, f1]))
    spec = NetworkSpec("crnn", layers, scale, (1, ih, iw), class_count)
    propagate_shapes(spec)
    return spec


def weighted_layer_shapes(spec: NetworkSpec) -> list[tuple[str, tuple[int, int]]]:
    """(name, bank shape) for every weight matrix, in forward order.

    The recurrent layer contributes two matrices (".ih" and ".hh").
    """
    out = []
    idx = 0
    for layer in spec.layers:
        if layer.kind == LayerKind.CONV2D:
            o, c, kh, kw = layer.dims
            out.append((f"L{idx}.conv", (c * kh * kw, o)))
            idx += 1
        elif layer.kind == LayerKind.FULLY_CONNECTED:
            o, i = layer.dims
            out.append((f"L{idx}.fc", (i, o)))
            idx += 1
        elif layer.kind == LayerKind.RECURRENT:
            hidden, inp = layer.dims
            out.append((f"L{idx}.ih", (inp, hidden)))
            out.append((f"L{idx}.hh", (hidden, hidden)))
            idx += 1
    return out


# ---------------------------------------------------------------------------
# Runtime
# ---------------------------------------------------------------------------


class ForwardContext:
    """Per-call state for a network forward pass.

    mode "analog" runs weighted layers through the bit-sliced crossbar path
    with noise from ``rng``; mode "digital" uses the matrices in ``weights``
    (one per weight name). ``energy`` optionally accumulates forward energy
    per weighted layer from the actual bit planes driven.
    """

    def __init__(self, mode: str = "analog",
                 rng: np.random.Generator | None = None,
                 weights: dict[str, np.ndarray] | None = None,
                 energy=None, record: dict | None = None):
        if mode not in ("analog", "digital"):
            raise ArgumentError(f"unknown forward mode {mode!r}")
        self.mode = mode
        self.rng = rng
        self.weights = weights or {}
        self.energy = energy
        self.record = record  # unit name -> running max |input|, for calibration


class _WeightedUnit:
    """One weight matrix: a bank plus its input quantization spec."""

    def __init__(self, name: str, shape: tuple[int, int]):
        self.name = name
        self.shape = shape
        self.bank: DifferentialPairBank | None = None
        self.qspec: QuantizationSpec | None = None
        self.calibrate_range = False  # True: input hi learned from a probe batch

    def matrix(self, ctx: ForwardContext) -> np.ndarray:
        if ctx.mode == "digital":
            W = ctx.weights[self.name]
            if W.shape != self.shape:
                raise DimensionError(
                    f"{self.name}: weight shape {W.shape} != {self.shape}")
            return W
        raise ArgumentError("matrix() is only for digital mode")

    def product(self, x2d: np.ndarray, ctx: ForwardContext) -> np.ndarray:
        """y = x @ W via the configured path; x2d is (n, rows)."""
        if ctx.record is not None:
            sample = x2d.ravel()
            if sample.size > 65536:
                sample = sample[:: sample.size // 65536 + 1]
            prev = ctx.record.get(self.name)
            ctx.record[self.name] = (sample.copy() if prev is None
                                     else np.concatenate([prev, sample]))
        if ctx.mode == "digital":
            return x2d @ self.matrix(ctx)
        planes = quantize_input(x2d, self.qspec)
        if ctx.energy is not None:
            ctx.energy.add(self.name, self.bank, planes, self.qspec)
        return vmm_bit_sliced(self.bank, x2d, self.qspec, rng=ctx.rng,
                              planes=planes)


class _Layer:
    units: list[_WeightedUnit] = []

    def forward(self, x, ctx):  # pragma: no cover
        raise NotImplementedError

    def backward(self, dy, cache, ctx):  # pragma: no cover
        raise NotImplementedError


class _ConvLayer(_Layer):
    def __init__(self, dims, name):
        self.o, self.c, self.kh, self.kw = dims
        self.unit = _WeightedUnit(name, (self.c * self.kh * self.kw, self.o))
        self.units = [self.unit]

    def forward(self, x, ctx):
        n, c, h, w = x.shape
        if c != self.c:
            raise DimensionError(f"conv channel mismatch: {c} != {self.c}")
        hp, wp = h - self.kh + 1, w - self.kw + 1
        patches = ops.im2col(x, self.kh, self.kw)
        flat = patches.reshape(-1, patches.shape[-1])
        y = self.unit.product(flat, ctx)
        y = y.reshape(n, hp, wp, self.o).transpose(0, 3, 1, 2)
        return y, {"patches": flat, "x_shape": x.shape}

    def backward(self, dy, cache, bw_weights):
        W = bw_weights[self.unit.name]  # (C*kh*kw, O)
        n, o, hp, wp = dy.shape
        dy_flat = dy.transpose(0, 2, 3, 1).reshape(-1, o)
        dW = cache["patches"].T @ dy_flat
        dpatches = dy_flat @ W.T
        dx = ops.col2im(dpatches, cache["x_shape"], self.kh, self.kw)
        return dx, {self.unit.name: dW}


class _FCLayer(_Layer):
    def __init__(self, dims, name):
        self.out, self.inp = dims
        self.unit = _WeightedUnit(name, (self.inp, self.out))
        self.units = [self.unit]

    def forward(self, x, ctx):
        if x.ndim != 2 or x.shape[1] != self.inp:
            raise DimensionError(f"fc expects (N, {self.inp}), got {x.shape}")
        return self.unit.product(x, ctx), {"x": x}

    def backward(self, dy, cache, bw_weights):
        W = bw_weights[self.unit.name]
        dW = cache["x"].T @ dy
        return dy @ W.T, {self.unit.name: dW}


class _RecurrentLayer(_Layer):
    """tanh RNN over the rows of a feature map, output = mean hidden state.

    x_t = mean over width of row t (a channel vector); h_0 = 0.
    """

    def __init__(self, dims, name):
        self.hidden, self.inp = dims
        self.unit_ih = _WeightedUnit(f"{name}.ih", (self.inp, self.hidden))
        self.unit_hh = _WeightedUnit(f"{name}.hh", (self.hidden, self.hidden))
        self.units = [self.unit_ih, self.unit_hh]

    def forward(self, x, ctx):
        if x.ndim != 4 or x.shape[1] != self.inp:
            raise DimensionError(
                f"recurrent expects (N, {self.inp}, T, W), got {x.shape}")
        n, _, steps, width = x.shape
        h = np.zeros((n, self.hidden), dtype=np.float64)
        xs, hs = [], []
        for t in range(steps):
            x_t = x[:, :, t, :].mean(axis=2)
            a = self.unit_ih.product(x_t, ctx) + self.unit_hh.product(h, ctx)
            h = np.tanh(a)
            xs.append(x_t)
            hs.append(h)
        out = np.zeros_like(h)
        for ht in hs:
            out += ht
        out /= steps
        return out, {"xs": xs, "hs": hs, "x_shape": x.shape}

    def backward(self, dy, cache, bw_weights):
        W_ih = bw_weights[self.unit_ih.name]  # (in, hidden)
        W_hh = bw_weights[self.unit_hh.name]
        xs, hs = cache["xs"], cache["hs"]
        n, _, steps, width = cache["x_shape"]
        dW_ih = np.zeros_like(W_ih)
        dW_hh = np.zeros_like(W_hh)
        dx = np.zeros(cache["x_shape"], dtype=np.float64)
        carry = np.zeros((n, self.hidden), dtype=np.float64)
        for t in range(steps - 1, -1, -1):
            dh = dy / steps + carry
            da = dh * (1.0 - hs[t] * hs[t])
            h_prev = hs[t - 1] if t > 0 else np.zeros((n, self.hidden))
            dW_ih += xs[t].T @ da
            dW_hh += h_prev.T @ da
            carry = da @ W_hh.T
            dx_t = da @ W_ih.T  # (N, in)
            dx[:, :, t, :] = dx_t[:, :, None] / width
        return dx, {self.unit_ih.name: dW_ih, self.unit_hh.name: dW_hh}


class _ReluLayer(_Layer):
    def forward(self, x, ctx):
        return ops.relu_forward(x), {"x": x}

    def backward(self, dy, cache, bw_weights):
        return ops.relu_backward(cache["x"], dy), {}


class _TanhLayer(_Layer):
    def forward(self, x, ctx):
        y = ops.tanh_forward(x)
        return y, {"y": y}

    def backward(self, dy, cache, bw_weights):
        return ops.tanh_backward(cache["y"], dy), {}


class _PoolLayer(_Layer):
    def forward(self, x, ctx):
        y, argmax = ops.maxpool2x2_forward(x)
        return y, {"argmax": argmax, "x_shape": x.shape}

    def backward(self, dy, cache, bw_weights):
        return ops.maxpool2x2_backward(dy, cache["argmax"], cache["x_shape"]), {}


class _CropLayer(_Layer):
    def forward(self, x, ctx):
        return ops.crop_to_even_forward(x), {"x_shape": x.shape}

    def backward(self, dy, cache, bw_weights):
        return ops.crop_to_even_backward(dy, cache["x_shape"]), {}


class _FlattenLayer(_Layer):
    def forward(self, x, ctx):
        return x.reshape(x.shape[0], -1), {"x_shape": x.shape}

    def backward(self, dy, cache, bw_weights):
        return dy.reshape(cache["x_shape"]), {}


class Network:
    """Runtime network assembled from a NetworkSpec.

    Weighted units get banks attached by the trainer/builder; the digital
    path instead takes explicit matrices through the ForwardContext.
    """

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        propagate_shapes(spec)
        self.layers: list[_Layer] = []
        idx = 0
        for lspec in spec.layers:
            k = lspec.kind
            if k == LayerKind.CONV2D:
                self.layers.append(_ConvLayer(lspec.dims, f"L{idx}.conv"))
                idx += 1
            elif k == LayerKind.FULLY_CONNECTED:
                self.layers.append(_FCLayer(lspec.dims, f"L{idx}.fc"))
                idx += 1
            elif k == LayerKind.RECURRENT:
                self.layers.append(_RecurrentLayer(lspec.dims, f"L{idx}"))
                idx += 1
            elif k == LayerKind.RELU:
                self.layers.append(_ReluLayer())
            elif k == LayerKind.TANH:
                self.layers.append(_TanhLayer())
            elif k == LayerKind.MAXPOOL2X2:
                self.layers.append(_PoolLayer())
            elif k == LayerKind.CROP_TO_EVEN:
                self.layers.append(_CropLayer())
            elif k == LayerKind.FLATTEN:
                self.layers.append(_FlattenLayer())
            elif k == LayerKind.SOFTMAX_XENT:
                pass  # the loss head lives in the trainer
            else:  # pragma: no cover
                raise ArgumentError(f"unknown layer kind {k}")

    @property
    def units(self) -> list[_WeightedUnit]:
        return [u for layer in self.layers for u in layer.units]

    def unit_by_name(self, name: str) -> _WeightedUnit:
        for u in self.units:
            if u.name == name:
                return u
        raise ArgumentError(f"no weighted unit named {name}")

    def forward(self, x: np.ndarray, ctx: ForwardContext):
        """Returns (logits, caches) with one cache entry per layer."""
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, ctx)
            caches.append(cache)
        return x, caches

    def backward(self, dlogits: np.ndarray, caches,
                 bw_weights: dict[str, np.ndarray]):
        """Backpropagate dL/dlogits; returns dict of dL/dW per unit name.

        ``bw_weights`` supplies the matrices used to route gradients (the
        digital copies in hardware-in-the-loop training).
        """
        grads: dict[str, np.ndarray] = {}
        dy = dlogits
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, layer_grads = layer.backward(dy, cache, bw_weights)
            grads.update(layer_grads)
        return grads
