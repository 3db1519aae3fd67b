"""Glue from records to labelled images, and the desk-scale profile."""

from __future__ import annotations

import logging
from dataclasses import replace
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import MI, NORMAL
from .errors import NoBeatsFound, SignalTooShort, TooFewBeats
from .ingest import EcgRecord, select_lead
from .nn.train import TrainConfig
from .raster import IMAGE_SIZE, EcgImage, render
from .sigprep import FILTERED, FilterSpec, prepare_signal
from .synthetic import SyntheticSpec, generate_synthetic

log = logging.getLogger(__name__)

LEAD_II = "ii"

# Desk profile: the same architecture at 1/8 width on 32x32 inputs.
DESK_WIDTH_SCALE = Fraction(1, 8)
DESK_IMAGE_SIZE = 32
DESK_EPOCHS = 10
DESK_IMAGES_PER_CLASS = 400
DESK_TRAIN_CONFIG = TrainConfig(epochs=DESK_EPOCHS, width_scale=DESK_WIDTH_SCALE,
                                input_size=DESK_IMAGE_SIZE, init_scheme="he")


def record_images(record: EcgRecord, *, noise_condition: str = FILTERED, size: int = IMAGE_SIZE,
                  lead: str = LEAD_II, filter_spec: FilterSpec = FilterSpec()) -> list[EcgImage]:
    """All beat-pair images of one record's chosen lead."""
    segments = prepare_signal(select_lead(record, lead), record.fs, record=record.name, label=record.label,
                              noise_condition=noise_condition, filter_spec=filter_spec)
    return [render(s, size) for s in segments]


def records_to_images(records: Iterable[EcgRecord], **kw) -> list[EcgImage]:
    """Images for every record in order; records too short or beatless are skipped with a warning."""
    out = []
    for rec in records:
        try:
            out.extend(record_images(rec, **kw))
        except (SignalTooShort, NoBeatsFound, TooFewBeats) as exc:
            log.warning("skipping %s: %s", rec.name, exc)
    return out


def synthetic_records(n_images_per_class: int, *, noise_condition: str = FILTERED, size: int = DESK_IMAGE_SIZE,
                      n_beats: int = 14, noise_amplitude: float = 0.05, sampling_rate: float = 1000.0,
                      heart_rate_range: tuple[float, float] = (55.0, 95.0), seed: int = 0,
                      filter_spec: FilterSpec = FilterSpec()) -> tuple[list[EcgRecord], list[EcgImage]]:
    """Generate alternating Normal/MI records until each class yields ``n_images_per_class`` images.

    Returns the records actually used and exactly ``n_images_per_class``
    images per class, in generation order (surplus images of the last record
    of a class are dropped).
    """
    rng = np.random.default_rng(seed)
    need = {NORMAL: n_images_per_class, MI: n_images_per_class}
    records, images = [], []
    i = 0
    while any(need.values()):
        for label in (NORMAL, MI):
            hr = float(np.round(rng.uniform(*heart_rate_range), 1))
            rec_seed = int(rng.integers(0, 2**31 - 1))
            if not need[label]:
                continue
            spec = SyntheticSpec(n_beats, hr, sampling_rate, noise_amplitude, label, rec_seed)
            rec, _ = generate_synthetic(spec, f"syn{i:04d}_{label.lower()}")
            imgs = records_to_images([rec], noise_condition=noise_condition, size=size, filter_spec=filter_spec)
            if imgs:
                records.append(rec)
                images.extend(imgs[: need[label]])
                need[label] -= min(need[label], len(imgs))
        i += 1
    return records, images


def desk_config(**overrides) -> TrainConfig:
    return replace(DESK_TRAIN_CONFIG, **overrides)


def count_labels(images: Sequence[EcgImage]) -> dict[str, int]:
    out: dict[str, int] = {}
    for im in images:
        out[im.label] = out.get(im.label, 0) + 1
    return out
