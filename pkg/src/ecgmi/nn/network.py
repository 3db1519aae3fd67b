"""The VGG-MI architecture, its width-scaled family, and whole-network passes."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..errors import ShapeMismatch
from . import layers as L

CONV = "Conv3x3"
POOL = "MaxPool2x2"
FC = "FullyConnected"
DROPOUT = "Dropout"
SOFTMAX = "Softmax"

FULL_INPUT_SIZE = 128
FEATURE_LAYER = 11  # second fully-connected layer, 1-based numbering


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    n_in: int = 0  # channels for conv, units for fc/softmax
    n_out: int = 0
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in (CONV, POOL, FC, DROPOUT, SOFTMAX):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def has_params(self) -> bool:
        return self.kind in (CONV, FC, SOFTMAX)

    def param_shapes(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        if self.kind == CONV:
            return (self.n_out, self.n_in, 3, 3), (self.n_out,)
        return (self.n_out, self.n_in), (self.n_out,)


def _scaled(n: int, width_scale: Fraction) -> int:
    v = n * width_scale
    if v.denominator != 1 or v < 1:
        raise ValueError(f"width scale {width_scale} gives non-integral width {v} for {n}")
    return int(v)


def build_architecture(width_scale: Fraction | float | str = 1, input_size: int = FULL_INPUT_SIZE,
                       dropout_rate: float = 0.5) -> list[LayerSpec]:
    """The VGG-style layer list with every channel/unit count multiplied by ``width_scale``.

    Conv(1->64), Conv(64->64), Pool, Conv(64->128), Conv(128->128), Pool,
    Conv(128->256), Conv(256->256), Pool, FC(16*16*256->2048),
    FC(2048->2048) + Dropout(0.5), Softmax FC(2048->2) at scale 1 and size 128.
    ReLU follows every conv and hidden fc layer.
    """
    ws = Fraction(width_scale).limit_denominator(1 << 16)
    if not 0 < ws <= 1:
        raise ValueError(f"width_scale must be in (0, 1], got {ws}")
    if input_size % 8:
        raise ValueError(f"input size must be divisible by 8, got {input_size}")
    c1, c2, c3, units = (_scaled(n, ws) for n in (64, 128, 256, 2048))
    flat = (input_size // 8) ** 2 * c3
    return [
        LayerSpec(CONV, 1, c1), LayerSpec(CONV, c1, c1), LayerSpec(POOL),
        LayerSpec(CONV, c1, c2), LayerSpec(CONV, c2, c2), LayerSpec(POOL),
        LayerSpec(CONV, c2, c3), LayerSpec(CONV, c3, c3), LayerSpec(POOL),
        LayerSpec(FC, flat, units),
        LayerSpec(FC, units, units), LayerSpec(DROPOUT, dropout_rate=dropout_rate),
        LayerSpec(SOFTMAX, units, 2),
    ]


def shape_trace(arch: list[LayerSpec], input_size: int = FULL_INPUT_SIZE) -> list[tuple[int, ...]]:
    """Input shape of each parameterised/pooling layer, from metadata only.

    Shapes are ``(H, W, C)`` for image-shaped inputs and ``(units,)`` for
    vectors, one entry per conv, pool and fc layer (dropout is folded into
    the preceding fc layer).
    """
    h, c = input_size, 1
    units = None
    trace = []
    for spec in arch:
        if spec.kind == DROPOUT:
            continue
        trace.append((h, h, c) if units is None else (units,))
        if spec.kind == CONV:
            if spec.n_in != c:
                raise ShapeMismatch(f"conv expects {spec.n_in} channels, gets {c}")
            c = spec.n_out
        elif spec.kind == POOL:
            if h % 2:
                raise ShapeMismatch(f"cannot pool odd size {h}")
            h //= 2
        else:
            n_in = h * h * c if units is None else units
            if spec.n_in != n_in:
                raise ShapeMismatch(f"fc expects {spec.n_in} inputs, gets {n_in}")
            units = spec.n_out
    return trace


@dataclass
class NetworkParams:
    arch: list[LayerSpec]
    weights: list[np.ndarray | None]
    biases: list[np.ndarray | None]
    width_scale: Fraction = Fraction(1)
    input_size: int = FULL_INPUT_SIZE
    input_scale: float = 1.0 / 255.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape_trace(self.arch, self.input_size)
        for spec, w, b in zip(self.arch, self.weights, self.biases, strict=True):
            if spec.has_params:
                ws, bs = spec.param_shapes()
                if w is None or b is None or w.shape != ws or b.shape != bs:
                    raise ShapeMismatch(f"{spec.kind} params do not match {ws}/{bs}")

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases) if w is not None)

    @property
    def feature_dim(self) -> int:
        return self.arch[-1].n_in

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            if w is not None:
                out.extend((w, b))
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.arch,
            [None if w is None else w.copy() for w in self.weights],
            [None if b is None else b.copy() for b in self.biases],
            self.width_scale, self.input_size, self.input_scale, dict(self.meta),
        )


def init_params(arch: list[LayerSpec], rng: np.random.Generator, *, std: float = 0.01, mean: float = 0.0,
                scheme: str = "gaussian", width_scale=1, input_size: int = FULL_INPUT_SIZE,
                input_scale: float = 1.0 / 255.0) -> NetworkParams:
    """Weights i.i.d. Gaussian, biases zero.

    ``scheme="gaussian"`` draws every weight from N(mean, std). ``scheme="he"``
    uses std ``sqrt(2 / fan_in)`` per layer instead, for narrow desk-profile
    networks whose activations vanish under the fixed small std.
    """
    if scheme not in ("gaussian", "he"):
        raise ValueError(f"unknown init scheme {scheme!r}")
    weights, biases = [], []
    for spec in arch:
        if spec.has_params:
            ws, bs = spec.param_shapes()
            sd = std if scheme == "gaussian" else np.sqrt(2.0 / int(np.prod(ws[1:])))
            weights.append(rng.normal(mean, sd, size=ws))
            biases.append(np.zeros(bs))
        else:
            weights.append(None)
            biases.append(None)
    return NetworkParams(arch, weights, biases, Fraction(width_scale).limit_denominator(1 << 16),
                         input_size, input_scale)


def zero_params(arch: list[LayerSpec], **kw) -> NetworkParams:
    p = init_params(arch, np.random.default_rng(0), std=0.0, **kw)
    return p


def prepare_input(params: NetworkParams, pixels: np.ndarray) -> np.ndarray:
    """Stack uint8 images ``(N, H, W)`` or ``(H, W)`` into a scaled ``(N, 1, H, W)`` batch."""
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (params.input_size, params.input_size):
        raise ShapeMismatch(f"image size {x.shape[1:]} does not match network input {params.input_size}")
    return (x * params.input_scale)[:, None]


def forward(params: NetworkParams, x: np.ndarray, *, train: bool = False,
            rng: np.random.Generator | None = None, stop_after: int | None = None):
    """Run the network on a batch ``(N, 1, H, W)``.

    Returns ``(output, caches)``. ``output`` is the logits, or, with
    ``stop_after=k``, the post-ReLU activation of layer index ``k`` in ``arch``.
    """
    caches = []
    a = x
    last = len(params.arch) - 1
    for i, (spec, w, b) in enumerate(zip(params.arch, params.weights, params.biases)):
        if spec.kind == CONV:
            z, cache = L.conv3x3_forward(a, w, b)
            a = L.relu(z)
            caches.append((cache, z))
        elif spec.kind == POOL:
            a, cache = L.maxpool2x2_forward(a)
            caches.append(cache)
        elif spec.kind == FC:
            z, cache = L.fc_forward(a, w, b)
            a = L.relu(z)
            caches.append((cache, z))
        elif spec.kind == DROPOUT:
            a, mask = L.dropout(a, spec.dropout_rate, train, rng)
            caches.append(mask)
        else:
            a, cache = L.fc_forward(a, w, b)
            caches.append(cache)
        if stop_after is not None and i == stop_after:
            return a, caches
        if i == last:
            break
    return a, caches


def backward(params: NetworkParams, grad_logits: np.ndarray, caches) -> tuple[list, list]:
    """Parameter gradients for every layer (None for parameter-free layers)."""
    n = len(params.arch)
    dws: list = [None] * n
    dbs: list = [None] * n
    g = grad_logits
    for i in range(n - 1, -1, -1):
        spec = params.arch[i]
        need_dx = i > 0
        if spec.kind == SOFTMAX:
            g, dws[i], dbs[i] = L.fc_backward(g, caches[i], need_dx)
        elif spec.kind == DROPOUT:
            g = L.dropout_backward(g, caches[i])
        elif spec.kind == POOL:
            g = L.maxpool2x2_backward(g, caches[i])
        elif spec.kind == FC:
            cache, z = caches[i]
            g, dws[i], dbs[i] = L.fc_backward(L.relu_backward(g, z), cache, need_dx)
        else:
            cache, z = caches[i]
            g, dws[i], dbs[i] = L.conv3x3_backward(L.relu_backward(g, z), cache, need_dx)
    return dws, dbs


def feature_layer_index(arch: list[LayerSpec]) -> int:
    """Index in ``arch`` of the second fully-connected layer."""
    fcs = [i for i, s in enumerate(arch) if s.kind == FC]
    return fcs[1]
