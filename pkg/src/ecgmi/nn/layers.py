"""Forward and backward passes for the layer types used by the network.

All functions work on batched float64 arrays: images are ``(N, C, H, W)``,
vectors ``(N, units)``. Unbatched inputs (``(C, H, W)`` or ``(units,)``) are
accepted by the forward functions and returned unbatched.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import OddDimensions, ShapeMismatch


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    # derivative at exactly 0 is taken as 0
    return grad * (x > 0)


def _batched(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise ShapeMismatch(f"expected {ndim - 1}-D or {ndim}-D input, got shape {x.shape}")
    return x, False


def im2col3x3(x: np.ndarray) -> np.ndarray:
    """Rows of 3x3 zero-padded neighbourhoods, shape ``(N*H*W, C*9)``."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (N, C, H, W, 3, 3)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3x3 cross-correlation, stride 1, zero padding 1, plus per-channel bias.

    Returns ``(y, cache)``; spatial size is preserved.
    """
    xb, single = _batched(x, 4)
    n, c, h, wd = xb.shape
    if w.ndim != 4 or w.shape[1:] != (c, 3, 3) or b.shape != (w.shape[0],):
        raise ShapeMismatch(f"conv weights {w.shape}/bias {b.shape} incompatible with input {xb.shape}")
    cols = im2col3x3(xb)
    wmat = w.reshape(w.shape[0], -1)
    y = (cols @ wmat.T + b).reshape(n, h, wd, -1).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y)
    cache = (cols, xb.shape, w)
    return (y[0] if single else y), cache


def conv3x3_backward(grad: np.ndarray, cache, need_input_grad: bool = True):
    """Returns ``(dx, dw, db)``; ``dx`` is None when not requested."""
    cols, (n, c, h, wd), w = cache
    g = grad.reshape(n, w.shape[0], h, wd) if grad.ndim == 3 else grad
    gf = g.transpose(0, 2, 3, 1).reshape(-1, w.shape[0])
    dw = (gf.T @ cols).reshape(w.shape)
    db = gf.sum(axis=0)
    if not need_input_grad:
        return None, dw, db
    dcols = (gf @ w.reshape(w.shape[0], -1)).reshape(n, h, wd, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, wd + 2))
    for ki in range(3):
        for kj in range(3):
            dxp[:, :, ki : ki + h, kj : kj + wd] += dcols[..., ki, kj].transpose(0, 3, 1, 2)
    dx = dxp[:, :, 1:-1, 1:-1]
    return dx, dw, db


def maxpool2x2_forward(x: np.ndarray):
    """2x2 max pooling, stride 2. Returns ``(y, cache)`` with argmax routing."""
    xb, single = _batched(x, 4)
    n, c, h, w = xb.shape
    if h % 2 or w % 2:
        raise OddDimensions(f"pooling needs even spatial dims, got {h}x{w}")
    blocks = xb.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = np.argmax(blocks, axis=-1)  # first maximum in row-major order on ties
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return (y[0] if single else y), (arg, xb.shape)


def maxpool2x2_backward(grad: np.ndarray, cache) -> np.ndarray:
    arg, (n, c, h, w) = cache
    g = grad.reshape(arg.shape)
    blocks = np.zeros(arg.shape + (4,))
    np.put_along_axis(blocks, arg[..., None], g[..., None], axis=-1)
    return blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


def fc_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """``y = W x + b``; image-shaped input is flattened in (channel, row, col) order."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None] if single else x.reshape(x.shape[0], -1)
    if w.ndim != 2 or w.shape[1] != xb.shape[1] or b.shape != (w.shape[0],):
        raise ShapeMismatch(f"fc weights {w.shape}/bias {b.shape} incompatible with input {x.shape}")
    y = xb @ w.T + b
    return (y[0] if single else y), (xb, x.shape, w)


def fc_backward(grad: np.ndarray, cache, need_input_grad: bool = True):
    xb, in_shape, w = cache
    g = grad[None] if grad.ndim == 1 else grad
    dw = g.T @ xb
    db = g.sum(axis=0)
    if not need_input_grad:
        return None, dw, db
    dx = (g @ w).reshape(in_shape)
    return dx, dw, db


def dropout(x: np.ndarray, rate: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout. Returns ``(y, mask)``; ``mask`` is None at inference.

    In training each unit is zeroed with probability ``rate`` and survivors are
    scaled by ``1 / (1 - rate)``, so inference is the identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(grad: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return grad if mask is None else grad * mask


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, target):
    """Softmax cross-entropy.

    For a single logit vector returns ``(loss, probs, grad_logits)`` with
    ``grad = probs - onehot(target)``. For a batch ``(N, K)`` the loss is the
    batch mean and the gradient is scaled by ``1/N`` accordingly.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    lb = logits[None] if single else logits
    t = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if t.shape[0] != lb.shape[0] or np.any((t < 0) | (t >= lb.shape[1])):
        raise ShapeMismatch(f"targets {t} do not match logits of shape {lb.shape}")
    z = lb - np.max(lb, axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    probs = np.exp(z - logsum[:, None])
    rows = np.arange(lb.shape[0])
    losses = logsum - z[rows, t]
    grad = probs.copy()
    grad[rows, t] -= 1.0
    if single:
        return float(losses[0]), probs[0], grad[0]
    return float(losses.mean()), probs, grad / lb.shape[0]
