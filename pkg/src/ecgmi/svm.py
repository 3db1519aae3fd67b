"""Q-Gaussian kernel SVM trained by sequential minimal optimisation.

The kernel is

    K(x, y) = (1 + (q - 1) / ((3 - q) sigma^2) * ||x - y||^2) ** (1 / (1 - q))

which for q in (1, 3) is a heavy-tailed generalisation of the Gaussian RBF
(the limit q -> 1 recovers exp(-||x - y||^2 / sigma^2 / 2)).
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from . import MI, NORMAL
from .errors import DimensionMismatch, InvalidModel, IterationLimit, SingleClassTraining

MODEL_MAGIC = b"QGSVM\0"
MODEL_VERSION = 1


@dataclass(frozen=True)
class QGKernelParams:
    q: float = 1.5
    inv_sigma_sq: float = 0.5

    def __post_init__(self):
        if not 1.0 < self.q < 3.0:
            raise ValueError(f"q must lie in (1, 3), got {self.q}")
        if self.inv_sigma_sq <= 0:
            raise ValueError("inv_sigma_sq must be positive")

    @property
    def coef(self) -> float:
        return (self.q - 1.0) * self.inv_sigma_sq / (3.0 - self.q)

    @property
    def exponent(self) -> float:
        return 1.0 / (1.0 - self.q)


@dataclass(frozen=True)
class SmoConfig:
    C: float = 1.0
    kkt_tolerance: float = 1e-3
    max_passes: int = 10
    max_iterations: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.C <= 0 or self.kkt_tolerance <= 0 or self.max_passes <= 0 or self.max_iterations <= 0:
            raise ValueError("SMO settings must all be positive")


def qg_from_sqdist(d2: np.ndarray | float, p: QGKernelParams):
    return (1.0 + p.coef * np.asarray(d2)) ** p.exponent


def qg_kernel(x, y, p: QGKernelParams = QGKernelParams()) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DimensionMismatch(f"vectors of length {x.size} and {y.size}")
    d = x - y
    return float(qg_from_sqdist(d @ d, p))


def gram(a: np.ndarray, b: np.ndarray, p: QGKernelParams) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"feature dims {a.shape[1]} and {b.shape[1]}")
    return qg_from_sqdist(cdist(a, b, "sqeuclidean"), p)


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray
    dual_coeffs: np.ndarray  # alpha_i * y_i
    bias: float
    kernel: QGKernelParams = QGKernelParams()
    C: float = 1.0
    converged: bool = True
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None

    def __post_init__(self):
        sv = np.atleast_2d(np.asarray(self.support_vectors, dtype=np.float64))
        dc = np.asarray(self.dual_coeffs, dtype=np.float64).ravel()
        if dc.size == 0:
            raise InvalidModel("a model needs at least one support vector")
        if sv.shape[0] != dc.size:
            raise InvalidModel(f"{sv.shape[0]} support vectors but {dc.size} coefficients")
        a = np.abs(dc)
        if np.any(a <= 0) or np.any(a > self.C * (1 + 1e-12)):
            raise InvalidModel("every |alpha| must lie in (0, C]")
        if abs(dc.sum()) > 1e-6:
            raise InvalidModel(f"sum of alpha_i y_i is {dc.sum():.3g}, expected 0")
        object.__setattr__(self, "support_vectors", sv)
        object.__setattr__(self, "dual_coeffs", dc)

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.feature_mean is None:
            return x
        return (x - self.feature_mean) / self.feature_scale

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(self.transform(x))
        if x.shape[1] != self.dim:
            raise DimensionMismatch(f"model expects {self.dim} features, got {x.shape[1]}")
        return gram(x, self.support_vectors, self.kernel) @ self.dual_coeffs + self.bias


@dataclass
class SmoResult:
    alpha: np.ndarray
    bias: float
    objective: float
    converged: bool
    iterations: int


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def smo(K: np.ndarray, y: np.ndarray, cfg: SmoConfig = SmoConfig()) -> SmoResult:
    """Maximise the SVM dual over a precomputed Gram matrix.

    Platt's scheme: sweep for KKT violators (alternating full and non-bound
    sweeps), pick the partner maximising ``|E_i - E_j|``, falling back to the
    non-bound then all examples from a seeded random start; solve each pair
    analytically with box clipping and update the bias from non-bound
    multipliers. Stops after ``max_passes`` consecutive full sweeps without an
    update, or after ``max_iterations`` pair updates (``converged=False``).
    """
    n = y.size
    C, tol = cfg.C, cfg.kkt_tolerance
    eps = 1e-12
    rng = np.random.default_rng(cfg.seed)
    alpha = np.zeros(n)
    b = 0.0
    E = -y.astype(np.float64)  # f(x) - y with f = 0 initially
    steps = 0

    def take_step(i1: int, i2: int) -> bool:
        nonlocal b, steps
        if i1 == i2:
            return False
        a1, a2 = alpha[i1], alpha[i2]
        y1, y2 = y[i1], y[i2]
        E1, E2 = E[i1], E[i2]
        s = y1 * y2
        if y1 != y2:
            lo, hi = max(0.0, a2 - a1), min(C, C + a2 - a1)
        else:
            lo, hi = max(0.0, a1 + a2 - C), min(C, a1 + a2)
        if hi - lo < eps:
            return False
        k11, k12, k22 = K[i1, i1], K[i1, i2], K[i2, i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > eps:
            a2n = min(max(a2 + y2 * (E1 - E2) / eta, lo), hi)
        else:
            # objective along the constraint line at each end of the segment
            f1 = y1 * (E1 - b) - a1 * k11 - s * a2 * k12
            f2 = y2 * (E2 - b) - s * a1 * k12 - a2 * k22
            def obj(a2v):
                a1v = a1 + s * (a2 - a2v)
                return (a1v * f1 + a2v * f2 + 0.5 * a1v * a1v * k11
                        + 0.5 * a2v * a2v * k22 + s * a1v * a2v * k12)
            lo_obj, hi_obj = obj(lo), obj(hi)
            if lo_obj < hi_obj - eps:
                a2n = lo
            elif lo_obj > hi_obj + eps:
                a2n = hi
            else:
                a2n = a2
        if a2n < eps:
            a2n = 0.0
        elif a2n > C - eps:
            a2n = C
        if abs(a2n - a2) < eps * (a2n + a2 + eps):
            return False
        a1n = a1 + s * (a2 - a2n)
        if a1n < eps:
            a1n = 0.0
        elif a1n > C - eps:
            a1n = C
        d1, d2 = y1 * (a1n - a1), y2 * (a2n - a2)
        b1 = b - E1 - d1 * k11 - d2 * k12
        b2 = b - E2 - d1 * k12 - d2 * k22
        if 0.0 < a1n < C:
            bn = b1
        elif 0.0 < a2n < C:
            bn = b2
        else:
            bn = 0.5 * (b1 + b2)
        E[:] += d1 * K[:, i1] + d2 * K[:, i2] + (bn - b)
        alpha[i1], alpha[i2] = a1n, a2n
        b = bn
        steps += 1
        return True

    def examine(i2: int) -> int:
        r2 = E[i2] * y[i2]
        a2 = alpha[i2]
        if not ((r2 < -tol and a2 < C) or (r2 > tol and a2 > 0)):
            return 0
        nonbound = np.flatnonzero((alpha > 0) & (alpha < C))
        if nonbound.size > 1:
            i1 = int(nonbound[np.argmax(np.abs(E[nonbound] - E[i2]))])
            if take_step(i1, i2):
                return 1
        if nonbound.size:
            for i1 in np.roll(nonbound, -int(rng.integers(nonbound.size))):
                if take_step(int(i1), i2):
                    return 1
        for i1 in np.roll(np.arange(n), -int(rng.integers(n))):
            if take_step(int(i1), i2):
                return 1
        return 0

    examine_all = True
    quiet_passes = 0
    converged = True
    while True:
        if steps >= cfg.max_iterations:
            converged = False
            break
        if examine_all:
            changed = sum(examine(i) for i in range(n))
            if changed == 0:
                quiet_passes += 1
                if quiet_passes >= cfg.max_passes:
                    break
            else:
                quiet_passes = 0
                examine_all = False
        else:
            nb = np.flatnonzero((alpha > 0) & (alpha < C))
            changed = sum(examine(int(i)) for i in nb)
            if changed == 0:
                examine_all = True
    return SmoResult(alpha, b, dual_objective(alpha, y, K), converged, steps)


def _check_binary(features, labels) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).ravel()
    if X.shape[0] != y.size:
        raise DimensionMismatch(f"{X.shape[0]} feature rows but {y.size} labels")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("binary labels must be -1 or +1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SingleClassTraining("SVM training needs at least one example of each class")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    return X, y


def train_svm(features, labels, kernel: QGKernelParams = QGKernelParams(), cfg: SmoConfig = SmoConfig(),
              *, standardize: bool = False) -> SvmModel:
    """Fit a binary QG-kernel SVM (labels -1 = Normal, +1 = MI).

    When SMO hits ``max_iterations`` an :class:`IterationLimit` warning is
    issued and the best-so-far model is returned with ``converged=False``.
    """
    X, y = _check_binary(features, labels)
    mean = scale = None
    if standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        X = (X - mean) / scale
    res = smo(gram(X, X, kernel), y, cfg)
    if not res.converged:
        warnings.warn(f"SMO stopped after {res.iterations} updates without converging", IterationLimit,
                      stacklevel=2)
    sv = res.alpha > 0
    return SvmModel(X[sv], res.alpha[sv] * y[sv], res.bias, kernel, cfg.C, res.converged, mean, scale)


def predict_svm(model: SvmModel, x) -> tuple[str, float]:
    """Class name and decision value; a decision value of exactly 0 maps to Normal."""
    f = float(model.decision_function(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])
    return (MI if f > 0 else NORMAL), f


def predict_svm_batch(model: SvmModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Class indices (0 Normal, 1 MI) and decision values for a feature matrix."""
    f = model.decision_function(X)
    return (f > 0).astype(np.int64), f


# --------------------------------------------------------------------------
# multi-class


def train_one_vs_rest(features, labels: Sequence[int], kernel: QGKernelParams = QGKernelParams(),
                      cfg: SmoConfig = SmoConfig(), *, standardize: bool = False) -> list[SvmModel]:
    """One binary model per class (class c -> +1, everything else -> -1), in class order."""
    y = np.asarray(labels, dtype=np.int64).ravel()
    classes = np.unique(y)
    if classes.size < 2:
        raise SingleClassTraining("one-vs-rest needs at least two classes")
    if not np.array_equal(classes, np.arange(classes.size)):
        raise ValueError("class labels must be 0..k-1")
    return [train_svm(features, np.where(y == c, 1.0, -1.0), kernel, cfg, standardize=standardize)
            for c in classes]


def predict_one_vs_rest(models: Sequence[SvmModel], X) -> np.ndarray:
    """Argmax over per-class decision values; ties go to the lowest class index."""
    scores = np.stack([m.decision_function(X) for m in models], axis=1)
    return np.argmax(scores, axis=1)


# --------------------------------------------------------------------------
# model file


def encode_model(model: SvmModel) -> bytes:
    m, d = model.support_vectors.shape
    flags = (1 if model.feature_mean is not None else 0) | (2 if model.converged else 0)
    out = [MODEL_MAGIC, bytes([MODEL_VERSION]),
           struct.pack("<4d", model.kernel.q, model.kernel.inv_sigma_sq, model.bias, model.C),
           struct.pack("<3Q", m, d, flags),
           model.dual_coeffs.astype("<f8").tobytes(),
           model.support_vectors.astype("<f8").tobytes()]
    if model.feature_mean is not None:
        out.append(np.asarray(model.feature_mean, dtype="<f8").tobytes())
        out.append(np.asarray(model.feature_scale, dtype="<f8").tobytes())
    return b"".join(out)


def decode_model(data: bytes) -> SvmModel:
    if not data.startswith(MODEL_MAGIC):
        raise InvalidModel("not a QG-SVM model file")
    try:
        return _decode_body(data, len(MODEL_MAGIC))
    except InvalidModel:
        raise
    except (struct.error, ValueError, IndexError) as exc:
        raise InvalidModel(f"truncated or corrupt model file: {exc}") from None


def _decode_body(data: bytes, pos: int) -> SvmModel:
    if data[pos] != MODEL_VERSION:
        raise InvalidModel(f"unsupported model version {data[pos]}")
    pos += 1
    q, inv_s2, bias, C = struct.unpack_from("<4d", data, pos)
    pos += 32
    m, d, flags = struct.unpack_from("<3Q", data, pos)
    pos += 24
    if 8 * (m + m * d) > len(data) - pos:
        raise InvalidModel("model file shorter than its header declares")

    def take(count: int) -> np.ndarray:
        nonlocal pos
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        return arr

    dual = take(m)
    sv = take(m * d).reshape(m, d)
    mean = scale = None
    if flags & 1:
        mean, scale = take(d), take(d)
    if pos != len(data):
        raise InvalidModel("trailing bytes in model file")
    return SvmModel(sv, dual, bias, QGKernelParams(q, inv_s2), C, bool(flags & 2), mean, scale)


def save_model(model: SvmModel, path: str | Path) -> None:
    Path(path).write_bytes(encode_model(model))


def load_model(path: str | Path) -> SvmModel:
    return decode_model(Path(path).read_bytes())
