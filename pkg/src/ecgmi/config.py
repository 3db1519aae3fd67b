"""Plain ``key = value`` run configuration.

Grammar: one ``key = value`` per line, keys trimmed, ``#`` starts a comment,
scalars unquoted, flags ``true``/``false``. Every key has a default; defaults
are the full-scale training and kernel settings.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

from .evaluation import HOLDOUT, MODEL_MI1, MODEL_MI2, TEN_FOLD, ScenarioSpec
from .nn.train import TrainConfig
from .sigprep import FILTERED, RAW, FilterSpec
from .svm import QGKernelParams, SmoConfig

THREADS_ENV = "ECGMI_THREADS"
MODEL_BOTH = "both"


class ConfigError(ValueError):
    """Unknown key or out-of-range value; the message names the key and what it accepts."""


@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # int | float | fraction | bool | str | choice
    default: Any
    accepts: str
    check: Callable[[Any], bool] = lambda v: True
    choices: tuple[str, ...] = ()


def _pos(v) -> bool:
    return v > 0


def _nonneg(v) -> bool:
    return v >= 0


KEYS: tuple[Key, ...] = (
    Key("seed", "int", 0, "integer >= 0", _nonneg),
    Key("threads", "int", 0, "integer >= 0 (0 = auto)", _nonneg),
    # data locations
    Key("data", "str", "", "path"),
    Key("val_data", "str", "", "path"),
    Key("checkpoint", "str", "", "path"),
    Key("svm_model", "str", "", "path"),
    # ingest
    Key("lead", "str", "ii", "lead name"),
    Key("strict_checksum", "bool", False, "true/false"),
    # signal preparation
    Key("noise", "choice", "filtered", "filtered or raw", choices=("filtered", "raw")),
    Key("filter_low", "float", 0.5, "Hz > 0", _pos),
    Key("filter_high", "float", 40.0, "Hz > filter_low", _pos),
    Key("filter_order", "int", 2, "integer >= 1", _pos),
    Key("zero_phase", "bool", True, "true/false"),
    # raster / augmentation
    Key("image_size", "int", 128, "positive multiple of 8", lambda v: v > 0 and v % 8 == 0),
    Key("augment", "bool", True, "true/false"),
    # network and training
    Key("width_scale", "fraction", Fraction(1), "fraction in (0, 1], e.g. 1/8", lambda v: 0 < v <= 1),
    Key("learning_rate", "float", 0.001, "> 0", _pos),
    Key("weight_decay", "float", 0.0005, ">= 0", _nonneg),
    Key("momentum", "float", 0.9, "[0, 1)", lambda v: 0 <= v < 1),
    Key("epochs", "int", 50, "integer >= 1", _pos),
    Key("minibatch", "int", 5, "integer >= 1", _pos),
    Key("init_std", "float", 0.01, "> 0", _pos),
    Key("init_mean", "float", 0.0, "real"),
    Key("init_scheme", "choice", "gaussian", "gaussian or he", choices=("gaussian", "he")),
    Key("decay_biases", "bool", True, "true/false"),
    Key("dropout_rate", "float", 0.5, "[0, 1)", lambda v: 0 <= v < 1),
    Key("input_scale", "fraction", Fraction(1, 255), "positive fraction, e.g. 1/255", _pos),
    # QG-SVM
    Key("svm_q", "float", 1.5, "(1, 3)", lambda v: 1 < v < 3),
    Key("svm_inv_sigma_sq", "float", 0.5, "> 0", _pos),
    Key("svm_c", "float", 1.0, "> 0", _pos),
    Key("svm_tolerance", "float", 1e-3, "> 0", _pos),
    Key("svm_max_passes", "int", 10, "integer >= 1", _pos),
    Key("svm_max_iterations", "int", 100_000, "integer >= 1", _pos),
    Key("standardize_features", "bool", False, "true/false"),
    # evaluation
    Key("model", "choice", "mi2", "mi1, mi2 or both", choices=("mi1", "mi2", MODEL_BOTH)),
    Key("folds", "int", 10, "integer >= 2", lambda v: v >= 2),
    Key("split_mode", "choice", "tenfold", "tenfold or holdout", choices=("tenfold", "holdout")),
    Key("patient_level", "bool", False, "true/false"),
    # synthetic data
    Key("synth_images_per_class", "int", 400, "integer >= 1", _pos),
    Key("synth_beats", "int", 14, "integer >= 4", lambda v: v >= 4),
    Key("synth_noise", "float", 0.05, "mV >= 0", _nonneg),
    Key("synth_sampling_rate", "float", 1000.0, "Hz >= 250", lambda v: v >= 250),
    Key("synth_hr_min", "float", 55.0, "bpm in [30, 220]", lambda v: 30 <= v <= 220),
    Key("synth_hr_max", "float", 95.0, "bpm in [30, 220]", lambda v: 30 <= v <= 220),
)
KEY_INDEX = {k.name: k for k in KEYS}


def parse_value(key: str, text: str) -> Any:
    spec = KEY_INDEX.get(key)
    if spec is None:
        raise ConfigError(f"unknown configuration key {key!r}")
    t = text.strip()
    try:
        if spec.kind == "int":
            v = int(t)
        elif spec.kind == "float":
            v = float(t)
        elif spec.kind == "fraction":
            v = Fraction(t)
        elif spec.kind == "bool":
            if t.lower() not in ("true", "false"):
                raise ValueError(t)
            v = t.lower() == "true"
        elif spec.kind == "choice":
            v = t.lower()
            if v not in spec.choices:
                raise ValueError(t)
        else:
            v = t
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{key} = {t!r} is invalid; accepted: {spec.accepts}") from None
    if not spec.check(v):
        raise ConfigError(f"{key} = {t!r} is out of range; accepted: {spec.accepts}")
    return v


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def defaults() -> dict[str, Any]:
    return {k.name: k.default for k in KEYS}


def parse_config_text(text: str) -> dict[str, Any]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(key, value)
    return out


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None,
                env: dict[str, str] | None = None) -> dict[str, Any]:
    """Defaults, then the file, then ``overrides``, then ``ECGMI_THREADS``."""
    cfg = defaults()
    if path:
        cfg.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    cfg.update(overrides or {})
    env = os.environ if env is None else env
    if env.get(THREADS_ENV, "").strip():
        cfg["threads"] = parse_value("threads", env[THREADS_ENV])
    if cfg["filter_high"] <= cfg["filter_low"]:
        raise ConfigError(f"filter_high = {cfg['filter_high']} must exceed filter_low = {cfg['filter_low']}")
    if cfg["synth_hr_max"] < cfg["synth_hr_min"]:
        raise ConfigError("synth_hr_max must be >= synth_hr_min")
    return cfg


def render_config(cfg: dict[str, Any], command: str = "") -> str:
    head = [f"# command: {command}"] if command else []
    return "\n".join(head + [f"{k.name} = {format_value(cfg[k.name])}" for k in KEYS]) + "\n"


# --------------------------------------------------------------------------
# typed views


def noise_condition(cfg) -> str:
    return FILTERED if cfg["noise"] == "filtered" else RAW


def filter_spec(cfg) -> FilterSpec:
    return FilterSpec(cfg["filter_low"], cfg["filter_high"], cfg["filter_order"], cfg["zero_phase"])


def train_config(cfg) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg["learning_rate"], weight_decay=cfg["weight_decay"], momentum=cfg["momentum"],
        epochs=cfg["epochs"], minibatch=cfg["minibatch"], init_std=cfg["init_std"],
        init_mean=cfg["init_mean"], init_scheme=cfg["init_scheme"], seed=cfg["seed"],
        decay_biases=cfg["decay_biases"], width_scale=cfg["width_scale"], input_size=cfg["image_size"],
        input_scale=float(cfg["input_scale"]), dropout_rate=cfg["dropout_rate"],
    )


def kernel_params(cfg) -> QGKernelParams:
    return QGKernelParams(cfg["svm_q"], cfg["svm_inv_sigma_sq"])


def smo_config(cfg) -> SmoConfig:
    return SmoConfig(cfg["svm_c"], cfg["svm_tolerance"], cfg["svm_max_passes"], cfg["svm_max_iterations"],
                     cfg["seed"])


def scenario_specs(cfg) -> list[ScenarioSpec]:
    models = [MODEL_MI1, MODEL_MI2] if cfg["model"] == MODEL_BOTH else [cfg["model"].upper()]
    return [ScenarioSpec(noise_condition(cfg), cfg["augment"], m, cfg["folds"],
                         TEN_FOLD if cfg["split_mode"] == "tenfold" else HOLDOUT, cfg["seed"],
                         cfg["patient_level"]) for m in models]
