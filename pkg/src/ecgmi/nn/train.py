"""SGD-with-momentum training (VGG-MI1), inference and feature extraction (VGG-MI2)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .. import CLASS_INDEX
from ..errors import NonFiniteLoss, ShapeMismatch, SingleClassTraining
from . import layers as L
from .network import (
    NetworkParams,
    backward,
    build_architecture,
    feature_layer_index,
    forward,
    init_params,
    prepare_input,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    weight_decay: float = 0.0005
    momentum: float = 0.9
    epochs: int = 50
    minibatch: int = 5
    init_std: float = 0.01
    init_mean: float = 0.0
    init_scheme: str = "gaussian"
    seed: int = 0
    decay_biases: bool = True
    width_scale: Fraction = Fraction(1)
    input_size: int = 128
    input_scale: float = 1.0 / 255.0
    dropout_rate: float = 0.5

    def __post_init__(self):
        for name in ("learning_rate", "epochs", "minibatch", "init_std"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ValueError("weight_decay must be >= 0 and momentum in [0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainResult:
    params: NetworkParams
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0


def _labels(images) -> np.ndarray:
    return np.array([CLASS_INDEX[im.label] for im in images], dtype=np.int64)


def _stack(images) -> np.ndarray:
    return np.stack([im.pixels for im in images]) if len(images) else np.zeros((0, 0, 0), np.uint8)


def new_network(cfg: TrainConfig, rng: np.random.Generator) -> NetworkParams:
    arch = build_architecture(cfg.width_scale, cfg.input_size, cfg.dropout_rate)
    return init_params(arch, rng, std=cfg.init_std, mean=cfg.init_mean, scheme=cfg.init_scheme,
                       width_scale=cfg.width_scale,
                       input_size=cfg.input_size, input_scale=cfg.input_scale)


def sgd_step(params: NetworkParams, dws, dbs, velocity: list[np.ndarray], cfg: TrainConfig) -> None:
    """In place: ``v <- momentum*v - lr*(g + wd*w)``, ``w <- w + v``."""
    k = 0
    for i, w in enumerate(params.weights):
        if w is None:
            continue
        b = params.biases[i]
        for p, g, decay in ((w, dws[i], True), (b, dbs[i], cfg.decay_biases)):
            v = velocity[k]
            v *= cfg.momentum
            v -= cfg.learning_rate * (g + cfg.weight_decay * p if decay else g)
            p += v
            k += 1


def loss_and_grads(params: NetworkParams, x: np.ndarray, y: np.ndarray, *, train: bool = True,
                   rng: np.random.Generator | None = None):
    logits, caches = forward(params, x, train=train, rng=rng)
    loss, probs, grad = L.softmax_xent(logits, y)
    dws, dbs = backward(params, grad, caches)
    return loss, probs, dws, dbs


def evaluate_batches(params: NetworkParams, pixels: np.ndarray, labels: np.ndarray | None = None,
                     batch: int = 64) -> tuple[np.ndarray, float]:
    """Class probabilities for a stack of images, plus mean loss when labels are given."""
    probs = []
    total = 0.0
    for s in range(0, pixels.shape[0], batch):
        logits, _ = forward(params, prepare_input(params, pixels[s : s + batch]))
        if labels is not None:
            loss, p, _ = L.softmax_xent(logits, labels[s : s + batch])
            total += loss * p.shape[0]
        else:
            p = L.softmax(logits)
        probs.append(p)
    out = np.concatenate(probs) if probs else np.zeros((0, 2))
    return out, (total / max(1, pixels.shape[0]))


def n_batches(n: int, minibatch: int) -> int:
    """Partial final batches are kept."""
    return math.ceil(n / minibatch)


def train_mi1(train, val, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Train the network end to end with a two-way softmax head.

    Parameters
    ----------
    train, val : sequence of EcgImage
        Labelled images of size ``cfg.input_size``. ``val`` selects the
        returned parameters: the epoch with the best validation accuracy wins,
        ties going to the later epoch. When ``val`` is empty the final epoch is
        returned.
    cfg : TrainConfig

    Raises
    ------
    SingleClassTraining
        The training set lacks one of the two classes.
    NonFiniteLoss
        The loss diverged.
    """
    y = _labels(train)
    if len(np.unique(y)) < 2:
        raise SingleClassTraining("training data must contain both Normal and MI images")
    x_all = _stack(train)
    if x_all.shape[1:] != (cfg.input_size, cfg.input_size):
        raise ShapeMismatch(f"training images are {x_all.shape[1:]}, config expects {cfg.input_size}")
    x_val, y_val = _stack(val), _labels(val)

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng, order_rng, drop_rng = (np.random.default_rng(s) for s in seeds)
    params = new_network(cfg, init_rng)
    velocity = [np.zeros_like(p) for p in params.param_arrays()]

    best = params.copy()
    best_acc, best_epoch = -1.0, 0
    history = []
    n = len(y)
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(n)
        losses, correct = 0.0, 0
        for s in range(0, n, cfg.minibatch):
            idx = order[s : s + cfg.minibatch]
            x = prepare_input(params, x_all[idx])
            loss, probs, dws, dbs = loss_and_grads(params, x, y[idx], train=True, rng=drop_rng)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}, batch {s // cfg.minibatch + 1}")
            sgd_step(params, dws, dbs, velocity, cfg)
            losses += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == y[idx]))
        if len(y_val):
            p_val, val_loss = evaluate_batches(params, x_val, y_val)
            val_acc = float(np.mean(np.argmax(p_val, axis=1) == y_val))
        else:
            val_loss, val_acc = float("nan"), 0.0
        rec = EpochRecord(epoch, losses / n, correct / n, val_loss, val_acc)
        history.append(rec)
        log.info("epoch %d loss %.4f acc %.4f val_acc %.4f", epoch, rec.train_loss, rec.train_accuracy, val_acc)
        if val_acc >= best_acc:
            best_acc, best_epoch = val_acc, epoch
            best = params.copy()
    best.meta["best_epoch"] = best_epoch
    return TrainResult(best, history, best_epoch)


def predict_mi1(params: NetworkParams, image) -> tuple[int, np.ndarray]:
    """Class index (argmax) and probabilities for one image; dropout is off."""
    pixels = image.pixels if hasattr(image, "pixels") else np.asarray(image)
    probs, _ = evaluate_batches(params, pixels[None])
    return int(np.argmax(probs[0])), probs[0]


def predict_batch(params: NetworkParams, images: Sequence) -> np.ndarray:
    probs, _ = evaluate_batches(params, _stack(images))
    return np.argmax(probs, axis=1) if len(probs) else np.zeros(0, dtype=np.int64)


def extract_features(params: NetworkParams, image, layer: int | None = None) -> np.ndarray:
    """Post-ReLU activation of the second fully-connected layer (dropout off)."""
    pixels = image.pixels if hasattr(image, "pixels") else np.asarray(image)
    return extract_features_batch(params, pixels[None], layer)[0]


def extract_features_batch(params: NetworkParams, pixels: np.ndarray, layer: int | None = None,
                           batch: int = 64) -> np.ndarray:
    """Features for a stack of images. ``layer`` indexes ``params.arch`` (default: layer 11)."""
    k = feature_layer_index(params.arch) if layer is None else layer
    out = []
    for s in range(0, pixels.shape[0], batch):
        a, _ = forward(params, prepare_input(params, pixels[s : s + batch]), stop_after=k)
        out.append(a.reshape(a.shape[0], -1))
    return np.concatenate(out) if out else np.zeros((0, params.feature_dim))
