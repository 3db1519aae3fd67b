"""Lead II preparation: Butterworth band-pass, R/P/T peak detection, two-beat segments.

The filtered ("without noise") and raw ("with noise") datasets are produced by
the same code path; only the optional band-pass step differs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks, sosfilt

from . import MI, NORMAL
from .errors import InvalidCutoff, NoBeatsFound, SignalTooShort, TooFewBeats

log = logging.getLogger(__name__)

RAW = "Raw"
FILTERED = "Filtered"

SEGMENT_SECONDS = 2.0
SEGMENT_LEAD_IN = 0.250  # seconds before the first R of a pair
MAX_R_PER_WINDOW = 3

# detector constants (seconds unless noted)
QRS_BAND = (5.0, 15.0)
INTEGRATION_WINDOW = 0.150
REFRACTORY = 0.200
T_WAVE_WINDOW = 0.360
R_REFINE = 0.040
P_WINDOW = (-0.200, -0.080)
T_WINDOW = (0.120, 0.380)
SEARCHBACK_RR = 1.66


@dataclass(frozen=True)
class FilterSpec:
    low_cutoff: float = 0.5
    high_cutoff: float = 40.0
    order: int = 2
    zero_phase: bool = True

    def validate(self, fs: float) -> None:
        if not 0 < self.low_cutoff < self.high_cutoff < fs / 2:
            raise InvalidCutoff(
                f"need 0 < low ({self.low_cutoff}) < high ({self.high_cutoff}) < fs/2 ({fs / 2})"
            )
        if self.order < 1:
            raise InvalidCutoff(f"order must be >= 1, got {self.order}")


# --------------------------------------------------------------------------
# Butterworth band-pass design


def butter_bandpass_sos(low: float, high: float, fs: float, order: int) -> np.ndarray:
    """Digital Butterworth band-pass as second-order sections.

    ``order`` is the low-pass prototype order, so the band-pass has
    ``2 * order`` poles and ``order`` sections. Band edges are pre-warped so the
    -3 dB points land exactly on ``low`` and ``high`` after the bilinear map.

    Returns
    -------
    sos : ndarray, shape (order, 6)
        Rows ``[b0, b1, b2, 1, a1, a2]``.
    """
    FilterSpec(low, high, order).validate(fs)
    k2 = 2.0 * fs
    w1 = k2 * np.tan(np.pi * low / fs)
    w2 = k2 * np.tan(np.pi * high / fs)
    bw = w2 - w1
    w0 = np.sqrt(w1 * w2)

    proto = np.exp(1j * np.pi * (2 * np.arange(order) + order + 1) / (2 * order))
    half = proto * bw / 2
    root = np.sqrt(half**2 - w0**2 + 0j)
    analog = np.concatenate([half + root, half - root])
    # analog gain bw**order, zeros: `order` at s=0 (-> z=1), `order` at infinity (-> z=-1)
    digital = (k2 + analog) / (k2 - analog)
    gain = np.real(bw**order * k2**order / np.prod(k2 - analog))

    sections = _pair_poles(digital)
    sos = np.zeros((order, 6))
    for i, (pa, pb) in enumerate(sections):
        sos[i, :3] = [1.0, 0.0, -1.0]
        sos[i, 3:] = [1.0, -np.real(pa + pb), np.real(pa * pb)]
    sos[0, :3] *= gain
    return sos


def _pair_poles(poles: np.ndarray) -> list[tuple[complex, complex]]:
    tol = 1e-10
    upper = sorted((p for p in poles if p.imag > tol), key=lambda p: -abs(p))
    real = sorted((p.real for p in poles if abs(p.imag) <= tol), key=abs, reverse=True)
    pairs = [(p, np.conj(p)) for p in upper]
    pairs += [(complex(real[i]), complex(real[i + 1])) for i in range(0, len(real), 2)]
    return pairs


def sos_response(sos: np.ndarray, freqs: np.ndarray | float, fs: float) -> np.ndarray:
    """Complex frequency response of a section cascade at ``freqs`` (Hz)."""
    z = np.exp(-1j * 2 * np.pi * np.asarray(freqs, dtype=float) / fs)
    h = np.ones_like(z)
    for b0, b1, b2, a0, a1, a2 in sos:
        h = h * (b0 + b1 * z + b2 * z**2) / (a0 + a1 * z + a2 * z**2)
    return h


def _decay_length(sos: np.ndarray, rel_tol: float) -> int:
    """Samples until the slowest pole's envelope falls below ``rel_tol``."""
    radii = []
    for row in sos:
        radii.extend(np.abs(np.roots(row[3:])))
    r = max(radii)
    return int(np.ceil(np.log(rel_tol) / np.log(r))) + 16


def bandpass_filter(signal: np.ndarray, fs: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Butterworth band-pass, single pass or forward-backward (zero phase).

    Zero-phase mode odd-reflects the signal at both ends before filtering and
    runs both passes from rest over a zero tail long enough for the impulse
    response to die out. The result is a convolution with the symmetric kernel
    ``h * h[::-1]``, which makes it exactly linear and time-reversal symmetric.
    """
    spec.validate(fs)
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size <= 3 * spec.order:
        raise SignalTooShort(f"need more than {3 * spec.order} samples, got {x.size}")
    sos = butter_bandpass_sos(spec.low_cutoff, spec.high_cutoff, fs, spec.order)
    if not spec.zero_phase:
        return sosfilt(sos, x)

    pad = _decay_length(sos, 1e-7)
    tail = _decay_length(sos, 1e-17)
    ext = np.pad(x, pad, mode="reflect", reflect_type="odd") if x.size > 1 else np.pad(x, pad, mode="edge")
    work = np.concatenate([ext, np.zeros(tail)])
    y = sosfilt(sos, work)
    y = sosfilt(sos, y[::-1])[::-1]
    return y[pad : pad + x.size]


# --------------------------------------------------------------------------
# peak detection


@dataclass(frozen=True)
class PeakAnnotations:
    r_indices: np.ndarray
    p_indices: np.ndarray
    t_indices: np.ndarray

    def validate(self, n: int) -> None:
        for name in ("r_indices", "p_indices", "t_indices"):
            a = getattr(self, name)
            if a.size and (np.any(np.diff(a) <= 0) or a[0] < 0 or a[-1] >= n):
                raise ValueError(f"{name} not strictly increasing within [0, {n})")
        if not (np.all(self.p_indices < self.r_indices) and np.all(self.t_indices > self.r_indices)):
            raise ValueError("P must precede and T follow each paired R")


def _qrs_slope(diff: np.ndarray, idx: int, half: int) -> float:
    lo, hi = max(0, idx - half), min(diff.size, idx + half + 1)
    return float(np.max(np.abs(diff[lo:hi])))


def detect_r_peaks(signal: np.ndarray, fs: float) -> np.ndarray:
    """Pan-Tompkins style R-peak detector.

    band-limit 5-15 Hz -> derivative -> square -> 150 ms moving integration ->
    adaptive dual thresholds with 200 ms refractory, T-wave rejection and
    search-back, then refinement to the signal maximum within +/-40 ms.
    All thresholds are relative, so output is invariant to amplitude scaling.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.size < 2 * fs:
        raise SignalTooShort(f"need at least 2 s of signal, got {x.size / fs:.2f} s")
    if fs < 250:
        raise SignalTooShort(f"sampling rate {fs} Hz below the 250 Hz minimum")

    band = bandpass_filter(x - np.mean(x), fs, FilterSpec(*QRS_BAND, order=2, zero_phase=True))
    slope = np.gradient(band)
    win = max(1, int(round(INTEGRATION_WINDOW * fs)))
    mwi = np.convolve(slope**2, np.ones(win) / win, mode="same")
    if not np.any(mwi > 0) or np.max(mwi) <= 1e-12 * max(np.max(np.abs(x)), 1e-300) ** 2:
        return np.zeros(0, dtype=np.int64)

    refractory = int(round(REFRACTORY * fs))
    cand, _ = find_peaks(mwi, distance=refractory)
    if cand.size == 0:
        return np.zeros(0, dtype=np.int64)
    heights = mwi[cand]

    learn = mwi[: int(2 * fs)]
    spk = np.max(learn) / 3.0
    npk = np.mean(learn) / 2.0
    slope_half = int(round(0.075 * fs))

    qrs: list[int] = []
    qrs_slopes: list[float] = []
    rr_hist: list[int] = []
    last_cand_pos = -1

    def accept(i: int, searchback: bool) -> None:
        nonlocal spk
        h = heights[i]
        spk = (0.25 * h + 0.75 * spk) if searchback else (0.125 * h + 0.875 * spk)
        if qrs:
            rr_hist.append(int(cand[i] - qrs[-1]))
            del rr_hist[:-8]
        qrs.append(int(cand[i]))
        qrs_slopes.append(_qrs_slope(slope, int(cand[i]), slope_half))

    for i in range(cand.size):
        pos, h = int(cand[i]), heights[i]
        th1 = npk + 0.25 * (spk - npk)
        th2 = 0.5 * th1

        if qrs and rr_hist:
            rr_avg = float(np.mean(rr_hist))
            # search-back for a missed beat before considering this candidate
            if pos - qrs[-1] > SEARCHBACK_RR * rr_avg:
                window = [j for j in range(last_cand_pos + 1, i)
                          if cand[j] - qrs[-1] > refractory and heights[j] > th2]
                if window:
                    j = max(window, key=lambda k: heights[k])
                    accept(j, searchback=True)
                    th1 = npk + 0.25 * (spk - npk)

        if qrs and pos - qrs[-1] <= refractory:
            npk = 0.125 * h + 0.875 * npk
            continue
        if h > th1:
            if qrs and pos - qrs[-1] < T_WAVE_WINDOW * fs:
                if _qrs_slope(slope, pos, slope_half) < 0.5 * qrs_slopes[-1]:
                    npk = 0.125 * h + 0.875 * npk
                    continue
            accept(i, searchback=False)
            last_cand_pos = i
        else:
            npk = 0.125 * h + 0.875 * npk

    half = int(round(R_REFINE * fs))
    refined = []
    for r in qrs:
        lo, hi = max(0, r - half), min(x.size, r + half + 1)
        refined.append(lo + int(np.argmax(x[lo:hi])))
    r = np.unique(np.asarray(refined, dtype=np.int64))
    # refinement can pull two detections within the refractory period onto neighbours
    keep = [0] if r.size else []
    for k in range(1, r.size):
        if r[k] - r[keep[-1]] > refractory:
            keep.append(k)
        elif x[r[k]] > x[r[keep[-1]]]:
            keep[-1] = k
    return r[keep]


def detect_peaks(signal: np.ndarray, fs: float) -> PeakAnnotations:
    """R peaks plus P (max in R-200..R-80 ms) and T (max in R+120..R+380 ms) waves.

    P and T windows are clamped to the midpoints between neighbouring R peaks.

    Raises
    ------
    NoBeatsFound
        Fewer than three R peaks were found.
    """
    x = np.asarray(signal, dtype=np.float64)
    r = detect_r_peaks(x, fs)
    r = r[(r >= 1) & (r <= x.size - 2)]
    if r.size < 3:
        raise NoBeatsFound(f"found {r.size} R peaks, need at least 3")
    n = x.size
    p_out, t_out = [], []
    for k, rk in enumerate(r):
        lo_mid = (r[k - 1] + rk) // 2 + 1 if k > 0 else 0
        hi_mid = (rk + r[k + 1]) // 2 if k + 1 < r.size else n - 1
        lo = max(lo_mid, rk + int(round(P_WINDOW[0] * fs)), 0)
        hi = min(rk + int(round(P_WINDOW[1] * fs)), rk - 1)
        p_out.append(lo + int(np.argmax(x[lo : hi + 1])) if hi >= lo else rk - 1)
        lo = max(rk + int(round(T_WINDOW[0] * fs)), rk + 1)
        hi = min(hi_mid, rk + int(round(T_WINDOW[1] * fs)), n - 1)
        t_out.append(lo + int(np.argmax(x[lo : hi + 1])) if hi >= lo else rk + 1)
    ann = PeakAnnotations(r, np.asarray(p_out, dtype=np.int64), np.asarray(t_out, dtype=np.int64))
    return ann


# --------------------------------------------------------------------------
# segmentation


@dataclass(frozen=True)
class BeatSegment:
    samples: np.ndarray = field(repr=False)
    source_record: str
    start_index: int
    label: str
    noise_condition: str = FILTERED
    r_offsets: tuple[int, ...] = ()

    @property
    def segment_id(self) -> str:
        return f"{self.source_record}_{self.start_index:09d}_{self.noise_condition.lower()}"


def segment_length(fs: float) -> int:
    return int(round(SEGMENT_SECONDS * fs))


def segment_beats(
    signal: np.ndarray,
    ann: PeakAnnotations,
    fs: float,
    *,
    record: str = "",
    label: str = NORMAL,
    noise_condition: str = FILTERED,
    lead_in: float = SEGMENT_LEAD_IN,
) -> list[BeatSegment]:
    """Fixed-length windows, each holding two consecutive interior beats.

    The first and last detected beats are never used. Pairs advance by one
    beat, so consecutive segments overlap. A window must contain both R peaks
    of its pair; at ordinary rates the next beat's R also falls inside, but
    windows holding more than ``MAX_R_PER_WINDOW`` R peaks (above roughly
    103 bpm) are dropped, as are windows missing the second R (below roughly
    34 bpm).
    """
    x = np.asarray(signal, dtype=np.float64)
    r = np.asarray(ann.r_indices, dtype=np.int64)
    if r.size < 4:
        raise TooFewBeats(f"need at least 4 R peaks, got {r.size}")
    if label not in (NORMAL, MI):
        raise ValueError(f"segments must be labelled {NORMAL!r} or {MI!r}, got {label!r}")
    L = segment_length(fs)
    lead = int(round(lead_in * fs))
    out: list[BeatSegment] = []
    dropped = 0
    # 0-based interior pairs (i, i+1) with 1 <= i and i+1 <= N-2
    for i in range(1, r.size - 2):
        start = max(0, int(r[i]) - lead)
        inside = r[(r >= start) & (r < start + L)]
        if r[i + 1] >= start + L or inside.size > MAX_R_PER_WINDOW:
            dropped += 1
            continue
        chunk = x[start : start + L]
        if chunk.size < L:
            chunk = np.concatenate([chunk, np.zeros(L - chunk.size)])
        out.append(
            BeatSegment(
                samples=np.ascontiguousarray(chunk),
                source_record=record,
                start_index=start,
                label=label,
                noise_condition=noise_condition,
                r_offsets=tuple(int(v - start) for v in inside),
            )
        )
    if dropped:
        log.warning("%s: dropped %d of %d two-beat windows (pair not contained or rhythm too fast)",
                    record or "<signal>", dropped, r.size - 3)
    return out


def prepare_signal(
    signal: np.ndarray,
    fs: float,
    *,
    record: str,
    label: str,
    noise_condition: str,
    filter_spec: FilterSpec = FilterSpec(),
) -> list[BeatSegment]:
    """Filter (for the Filtered condition), detect peaks and cut segments."""
    x = np.asarray(signal, dtype=np.float64)
    if noise_condition == FILTERED:
        x = bandpass_filter(x, fs, filter_spec)
    elif noise_condition != RAW:
        raise ValueError(f"unknown noise condition {noise_condition!r}")
    ann = detect_peaks(x, fs)
    return segment_beats(x, ann, fs, record=record, label=label, noise_condition=noise_condition)


# --------------------------------------------------------------------------
# segment dump


def write_segments(directory: str | Path, segments: Sequence[BeatSegment]) -> None:
    """One little-endian float64 file per segment plus ``index.tsv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for seg in segments:
        (directory / f"{seg.segment_id}.f64").write_bytes(seg.samples.astype("<f8").tobytes())
        rows.append(f"{seg.segment_id}\t{seg.source_record}\t{seg.label}\t{seg.noise_condition}\n")
    (directory / "index.tsv").write_text("".join(rows), encoding="utf-8")


def read_segments(directory: str | Path) -> list[BeatSegment]:
    directory = Path(directory)
    out = []
    for line in (directory / "index.tsv").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        seg_id, record, label, cond = line.split("\t")
        samples = np.frombuffer((directory / f"{seg_id}.f64").read_bytes(), dtype="<f8").astype(np.float64)
        start = int(seg_id[len(record) + 1 :].split("_")[0])
        out.append(BeatSegment(samples, record, start, label, cond))
    return out
