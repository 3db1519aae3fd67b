"""Labelled synthetic ECG for running the pipeline without the PTB corpus.

Each beat is a sum of Gaussian bumps placed at fixed offsets around the R
peak. The morphology tables below are frozen: changing them changes every
downstream fixture.

=========  ============  ===========  ==========
wave       offset (ms)   amp (mV)     sigma (ms)
=========  ============  ===========  ==========
P          -200          +0.15        25
Q          -30 / -35     -0.10/-0.35  8 / 14       (Normal / MI)
R          0             +1.00        10
S          +30           -0.20        8
ST (MI)    +130          +0.20        50
T          +280          +0.30        45
=========  ============  ===========  ==========

MI beats get a deeper, wider Q wave and an elevated ST segment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import MI, NORMAL
from .ingest import EcgRecord, SignalHeader, SignalSpec

# (offset s, amplitude mV, sigma s)
NORMAL_WAVES = (
    (-0.200, 0.15, 0.025),
    (-0.030, -0.10, 0.008),
    (0.000, 1.00, 0.010),
    (0.030, -0.20, 0.008),
    (0.280, 0.30, 0.045),
)
MI_WAVES = (
    (-0.200, 0.15, 0.025),
    (-0.035, -0.35, 0.014),
    (0.000, 1.00, 0.010),
    (0.030, -0.20, 0.008),
    (0.130, 0.20, 0.050),
    (0.280, 0.30, 0.045),
)

SYNTH_GAIN = 2000.0
_COMMENT = {
    MI: "# Reason for admission: Myocardial infarction",
    NORMAL: "# Reason for admission: Healthy control",
}


@dataclass(frozen=True)
class SyntheticSpec:
    n_beats: int = 12
    heart_rate: float = 72.0
    sampling_rate: float = 1000.0
    noise_amplitude: float = 0.0
    label: str = NORMAL
    seed: int = 0

    def __post_init__(self):
        if self.n_beats < 1:
            raise ValueError("n_beats must be >= 1")
        if not 30 <= self.heart_rate <= 220:
            raise ValueError(f"heart_rate {self.heart_rate} outside [30, 220] bpm")
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be >= 0")
        if self.sampling_rate <= 0:
            raise ValueError("sampling_rate must be positive")
        if self.label not in (NORMAL, MI):
            raise ValueError(f"label must be {NORMAL!r} or {MI!r}")


def r_peak_positions(spec: SyntheticSpec) -> tuple[np.ndarray, int]:
    """Ground-truth R indices and total record length in samples."""
    period = spec.sampling_rate * 60.0 / spec.heart_rate
    r = np.rint(period / 2 + period * np.arange(spec.n_beats)).astype(np.int64)
    return r, int(round(period * spec.n_beats))


def clean_waveform(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    r_peaks, n = r_peak_positions(spec)
    t = np.arange(n) / spec.sampling_rate
    waves = MI_WAVES if spec.label == MI else NORMAL_WAVES
    x = np.zeros(n)
    for r in r_peaks:
        tr = r / spec.sampling_rate
        for offset, amp, sigma in waves:
            x += amp * np.exp(-0.5 * ((t - tr - offset) / sigma) ** 2)
    return x, r_peaks


def generate_synthetic(spec: SyntheticSpec, record_name: str | None = None) -> tuple[EcgRecord, np.ndarray]:
    """Single-lead (``ii``) synthetic record plus its exact R-peak indices."""
    x, r_peaks = clean_waveform(spec)
    if spec.noise_amplitude > 0:
        rng = np.random.default_rng(spec.seed)
        x = x + rng.uniform(-spec.noise_amplitude, spec.noise_amplitude, size=x.shape)
    name = record_name or f"syn_{spec.label.lower()}_{spec.seed}"
    header = SignalHeader(
        record_name=name,
        n_signals=1,
        sampling_rate=spec.sampling_rate,
        n_samples=x.size,
        signals=(SignalSpec(file_name=f"{name}.dat", lead_name="ii", adc_gain=SYNTH_GAIN, checksum=0),),
        comments=(_COMMENT[spec.label],),
    )
    return EcgRecord(header, x[None, :], spec.label), r_peaks


def synthetic_cohort(
    n_records_per_class: int,
    *,
    n_beats: int = 14,
    sampling_rate: float = 1000.0,
    heart_rate_range: tuple[float, float] = (55.0, 95.0),
    noise_amplitude: float = 0.05,
    seed: int = 0,
) -> list[tuple[EcgRecord, np.ndarray]]:
    """Records alternating Normal/MI with heart rates drawn uniformly from a range."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_records_per_class):
        for label in (NORMAL, MI):
            hr = float(np.round(rng.uniform(*heart_rate_range), 1))
            rec_seed = int(rng.integers(0, 2**31 - 1))
            spec = SyntheticSpec(n_beats, hr, sampling_rate, noise_amplitude, label, rec_seed)
            out.append(generate_synthetic(spec, f"syn{i:04d}_{label.lower()}"))
    return out
