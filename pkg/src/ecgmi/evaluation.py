"""Metrics, stratified splits, scenario runs and CSV reporting."""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import CLASS_INDEX, MI, NORMAL
from .augment import augment_dataset
from .errors import EmptyMatrix, SingleClassTraining, TooFewItems
from .nn.network import NetworkParams
from .nn.train import TrainConfig, extract_features_batch, predict_batch, train_mi1
from .sigprep import FILTERED, RAW
from .svm import QGKernelParams, SmoConfig, SvmModel, predict_svm_batch, train_svm

log = logging.getLogger(__name__)

MODEL_MI1 = "MI1"
MODEL_MI2 = "MI2"
TEN_FOLD = "TenFold"
HOLDOUT = "Holdout60_30_10"
POOLED = "pooled"

SCENARIO_NAMES = {
    (FILTERED, True): "best-case1",
    (FILTERED, False): "best-case2",
    (RAW, True): "worst-case1",
    (RAW, False): "worst-case2",
}


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ConfusionMatrix:
    """Binary counts with MI as the positive class."""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)

    def swapped(self) -> "ConfusionMatrix":
        """The same counts with Normal as the positive class."""
        return ConfusionMatrix(self.tn, self.tp, self.fn, self.fp)

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionMatrix":
        t = np.asarray(y_true, dtype=np.int64)
        p = np.asarray(y_pred, dtype=np.int64)
        if t.shape != p.shape:
            raise ValueError("prediction and label counts differ")
        return cls(int(np.sum((t == 1) & (p == 1))), int(np.sum((t == 0) & (p == 0))),
                   int(np.sum((t == 0) & (p == 1))), int(np.sum((t == 1) & (p == 0))))


@dataclass(frozen=True)
class Metrics:
    """Exact percentages; None where the denominator is zero."""

    accuracy: Fraction | None
    sensitivity: Fraction | None
    predictivity: Fraction | None
    specificity: Fraction | None

    def as_floats(self) -> dict[str, float | None]:
        return {k: (None if v is None else float(v)) for k, v in
                (("acc", self.accuracy), ("se", self.sensitivity),
                 ("pre", self.predictivity), ("spe", self.specificity))}


def _pct(num: int, den: int) -> Fraction | None:
    return None if den == 0 else Fraction(100 * num, den)


def compute_metrics(cm: ConfusionMatrix) -> Metrics:
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has no entries")
    return Metrics(_pct(cm.tp + cm.tn, cm.total), _pct(cm.tp, cm.tp + cm.fn),
                   _pct(cm.tp, cm.tp + cm.fp), _pct(cm.tn, cm.tn + cm.fp))


def format_pct(v: Fraction | None, places: int = 2) -> str:
    """Round half away from zero on the exact value; undefined prints as ``NA``."""
    if v is None:
        return "NA"
    scale = 10**places
    n = int((abs(v) * scale + Fraction(1, 2)).__floor__())
    s = f"{n // scale}.{n % scale:0{places}d}"
    return ("-" if v < 0 else "") + s


# --------------------------------------------------------------------------
# splitting


def stratified_k_fold(labels: Sequence, k: int = 10, seed: int = 0,
                      groups: Sequence | None = None) -> list[np.ndarray]:
    """Partition item indices into ``k`` class-balanced folds.

    Each class's indices are shuffled, the classes are concatenated in sorted
    order and the sequence is dealt round-robin into folds, so every class
    count and every fold size differs by at most one across folds.

    With ``groups`` (for example record names) whole groups are kept together:
    groups are shuffled per class and each goes to the fold currently holding
    the fewest items of that class. Balance is then by item count, not exact.
    """
    y = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    rng = np.random.default_rng(seed)
    classes = np.unique(y)
    if groups is None:
        for c in classes:
            if np.sum(y == c) < k:
                raise TooFewItems(f"class {c!r} has {np.sum(y == c)} items, fewer than k={k}")
        order = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in classes])
        return [np.sort(order[f::k]) for f in range(k)]

    g = np.asarray(groups)
    if g.shape != y.shape:
        raise ValueError("groups and labels differ in length")
    folds: list[list[int]] = [[] for _ in range(k)]
    for c in classes:
        names = np.unique(g[y == c])
        if names.size < k:
            raise TooFewItems(f"class {c!r} has {names.size} groups, fewer than k={k}")
        counts = np.zeros(k, dtype=np.int64)
        for name in names[rng.permutation(names.size)]:
            members = np.flatnonzero((g == name) & (y == c))
            f = int(np.argmin(counts))
            folds[f].extend(members.tolist())
            counts[f] += members.size
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]


def holdout_split(labels: Sequence, seed: int = 0,
                  fractions: tuple[float, float, float] = (0.6, 0.3, 0.1)) -> tuple[np.ndarray, ...]:
    """Stratified train/validation/test split; each class contributes its own shares."""
    y = np.asarray(labels)
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        n_val = int(round(fractions[1] * idx.size))
        n_test = int(round(fractions[2] * idx.size))
        if idx.size - n_val - n_test < 1 or n_test < 1:
            raise TooFewItems(f"class {c!r} has too few items ({idx.size}) for a holdout split")
        parts[0].append(idx[: idx.size - n_val - n_test])
        parts[1].append(idx[idx.size - n_val - n_test : idx.size - n_test])
        parts[2].append(idx[idx.size - n_test :])
    return tuple(np.sort(np.concatenate(p)) for p in parts)


# --------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class ScenarioSpec:
    noise: str = FILTERED
    augmentation: bool = True
    model: str = MODEL_MI2
    folds: int = 10
    split_mode: str = TEN_FOLD
    seed: int = 0
    patient_level: bool = False

    def __post_init__(self):
        if self.noise not in (FILTERED, RAW):
            raise ValueError(f"noise must be {FILTERED} or {RAW}")
        if self.model not in (MODEL_MI1, MODEL_MI2):
            raise ValueError(f"model must be {MODEL_MI1} or {MODEL_MI2}")
        if self.split_mode not in (TEN_FOLD, HOLDOUT):
            raise ValueError(f"split_mode must be {TEN_FOLD} or {HOLDOUT}")
        if self.split_mode == TEN_FOLD and self.folds < 2:
            raise ValueError("folds must be at least 2")

    @property
    def name(self) -> str:
        return SCENARIO_NAMES[(self.noise, self.augmentation)]


@dataclass
class FoldResult:
    fold: int
    matrix: ConfusionMatrix
    n_train: int
    params: NetworkParams | None = None
    svm: SvmModel | None = None


@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    folds: list[FoldResult]
    pooled: ConfusionMatrix
    metrics: Metrics

    @property
    def name(self) -> str:
        return self.spec.name


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def _split_plan(labels: np.ndarray, groups, spec: ScenarioSpec) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(train, val, test) index triples. In ten-fold mode fold i+1 validates fold i's run."""
    if spec.split_mode == HOLDOUT:
        return [holdout_split(labels, spec.seed)]
    folds = stratified_k_fold(labels, spec.folds, spec.seed, groups if spec.patient_level else None)
    plan = []
    for i in range(spec.folds):
        v = (i + 1) % spec.folds
        train = np.sort(np.concatenate([folds[j] for j in range(spec.folds) if j not in (i, v)]))
        plan.append((train, folds[v], folds[i]))
    return plan


def _run_fold(i: int, images, train_idx, val_idx, test_idx, spec: ScenarioSpec, train_cfg: TrainConfig,
              svm_cfg: SmoConfig, kernel: QGKernelParams, standardize: bool,
              params: NetworkParams | None) -> FoldResult:
    train = augment_dataset([images[j] for j in train_idx], spec.augmentation)
    val = [images[j] for j in val_idx]
    test = [images[j] for j in test_idx]
    if params is None:
        cfg = replace(train_cfg, seed=_fold_seed(train_cfg.seed, i))
        params = train_mi1(train, val, cfg).params
    y_test = np.array([CLASS_INDEX[im.label] for im in test], dtype=np.int64)
    model = None
    if spec.model == MODEL_MI1:
        pred = predict_batch(params, test)
    else:
        feats = extract_features_batch(params, np.stack([im.pixels for im in train]))
        y_train = np.array([1.0 if im.label == MI else -1.0 for im in train])
        model = train_svm(feats, y_train, kernel, replace(svm_cfg, seed=_fold_seed(svm_cfg.seed, i)),
                          standardize=standardize)
        pred, _ = predict_svm_batch(model, extract_features_batch(params, np.stack([im.pixels for im in test])))
    cm = ConfusionMatrix.from_predictions(y_test, pred)
    log.info("%s %s fold %d: %s", spec.name, spec.model, i, cm)
    return FoldResult(i, cm, len(train), params, model)


def run_scenario(images: Sequence, spec: ScenarioSpec, train_cfg: TrainConfig = TrainConfig(),
                 svm_cfg: SmoConfig = SmoConfig(), kernel: QGKernelParams = QGKernelParams(), *,
                 standardize: bool = False, threads: int = 1,
                 cnn_cache: dict | None = None) -> ScenarioResult:
    """Train and test one scenario over every fold and pool the confusion matrices.

    Parameters
    ----------
    images : sequence of EcgImage
        Unaugmented images already prepared under ``spec.noise``; ``group``
        holds the source record for patient-level splitting.
    spec : ScenarioSpec
    train_cfg, svm_cfg, kernel
        Per-fold seeds are derived from the configured seeds and the fold index.
    standardize : bool
        Standardise features before the SVM.
    threads : int
        Worker processes for folds (0 = one per CPU). Results are merged in
        fold order, so the outcome does not depend on scheduling.
    cnn_cache : dict, optional
        Maps ``(fold, train_cfg, augmentation, split_mode, seed)`` to trained parameters. Filled
        on the way out and reused when present, so MI1 and MI2 runs over the
        same split share one CNN per fold.
    """
    if not len(images):
        raise TooFewItems("empty dataset")
    labels = np.array([CLASS_INDEX.get(im.label, -1) for im in images])
    if np.any(labels < 0):
        raise ValueError("images must be labelled Normal or MI")
    if np.unique(labels).size < 2:
        raise SingleClassTraining("dataset must contain both classes")
    groups = [im.group for im in images]
    plan = _split_plan(labels, groups, spec)

    def cached(i):
        if cnn_cache is None:
            return None
        return cnn_cache.get((i, train_cfg, spec.augmentation, spec.split_mode, spec.seed))

    jobs = [(i, images, tr, va, te, spec, train_cfg, svm_cfg, kernel, standardize, cached(i))
            for i, (tr, va, te) in enumerate(plan)]
    workers = (os.cpu_count() or 1) if threads == 0 else threads
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            results = list(ex.map(_run_fold, *zip(*jobs)))
    else:
        results = [_run_fold(*job) for job in jobs]
    if cnn_cache is not None:
        for r in results:
            cnn_cache[(r.fold, train_cfg, spec.augmentation, spec.split_mode, spec.seed)] = r.params
    pooled = ConfusionMatrix()
    for r in results:
        pooled = pooled + r.matrix
    return ScenarioResult(spec, results, pooled, compute_metrics(pooled))


# --------------------------------------------------------------------------
# reporting

REPORT_HEADER = ["scenario", "model", "fold", "true_class", "predicted_normal", "predicted_mi",
                 "acc", "se", "pre", "spe"]


def _class_rows(prefix: list, cm: ConfusionMatrix) -> list[list[str]]:
    rows = []
    for cls, counts, view in ((NORMAL, (cm.tn, cm.fp), cm.swapped()), (MI, (cm.fn, cm.tp), cm)):
        m = compute_metrics(view) if cm.total else Metrics(None, None, None, None)
        rows.append(prefix + [cls, str(counts[0]), str(counts[1]), format_pct(m.accuracy),
                              format_pct(m.sensitivity), format_pct(m.predictivity),
                              format_pct(m.specificity)])
    return rows


def report(results: Sequence[ScenarioResult]) -> str:
    """CSV text: one row per (scenario, fold, true class) then the pooled rows.

    Each class row reads its metrics with that class as positive, the layout
    of a per-class confusion table: the Normal row's Se is Normal recall.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for res in results:
        for f in res.folds:
            w.writerows(_class_rows([res.name, res.spec.model, str(f.fold)], f.matrix))
        w.writerows(_class_rows([res.name, res.spec.model, POOLED], res.pooled))
    return buf.getvalue()


def summary(results: Sequence[ScenarioResult]) -> str:
    """``key=value`` lines, one block per scenario."""
    lines = []
    for res in results:
        m = res.metrics
        lines += [f"scenario={res.name}", f"model={res.spec.model}", f"noise={res.spec.noise}",
                  f"augmentation={str(res.spec.augmentation).lower()}", f"split_mode={res.spec.split_mode}",
                  f"folds={len(res.folds)}", f"pooled_total={res.pooled.total}",
                  f"pooled_tp={res.pooled.tp}", f"pooled_tn={res.pooled.tn}",
                  f"pooled_fp={res.pooled.fp}", f"pooled_fn={res.pooled.fn}",
                  f"pooled_acc={format_pct(m.accuracy)}", f"pooled_se={format_pct(m.sensitivity)}",
                  f"pooled_pre={format_pct(m.predictivity)}", f"pooled_spe={format_pct(m.specificity)}", ""]
    return "\n".join(lines)
