"""WFDB record parsing (PTB layout), Lead II selection and diagnosis labels.

Only the subset of WFDB needed for the PTB diagnostic database is supported:
single-segment records whose signals are all stored in format 16 in one
``.dat`` file.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import MI, NORMAL, OTHER
from .errors import (
    ChecksumMismatch,
    LeadNotFound,
    MalformedHeader,
    TruncatedData,
    UnsupportedFormat,
)

DEFAULT_GAIN = 200.0  # adu per mV, WFDB convention for a missing/zero gain
DEFAULT_ADC_RESOLUTION = 12

_GAIN_RE = re.compile(
    r"^(?P<gain>[-+0-9.eE]+)(?:\((?P<baseline>[-+]?\d+)\))?(?:/(?P<units>\S+))?$"
)


@dataclass(frozen=True)
class SignalSpec:
    file_name: str
    lead_name: str
    adc_gain: float = DEFAULT_GAIN
    adc_baseline: int = 0
    storage_format: int = 16
    units: str = "mV"
    adc_resolution: int = DEFAULT_ADC_RESOLUTION
    adc_zero: int = 0
    initial_value: int = 0
    checksum: int | None = None
    block_size: int = 0


@dataclass(frozen=True)
class SignalHeader:
    record_name: str
    n_signals: int
    sampling_rate: float
    n_samples: int
    signals: tuple[SignalSpec, ...]
    comments: tuple[str, ...] = ()

    def __post_init__(self):
        if self.n_signals < 1:
            raise MalformedHeader("record declares no signals")
        if self.sampling_rate <= 0:
            raise MalformedHeader(f"sampling rate must be positive, got {self.sampling_rate}")
        if len(self.signals) != self.n_signals:
            raise MalformedHeader(
                f"record line declares {self.n_signals} signals, found {len(self.signals)} signal lines"
            )
        for s in self.signals:
            if s.adc_gain <= 0:
                raise MalformedHeader(f"non-positive gain on lead {s.lead_name!r}")
            if s.storage_format != 16:
                raise UnsupportedFormat(f"storage format {s.storage_format} (only 16 is supported)")

    @property
    def lead_names(self) -> list[str]:
        return [s.lead_name for s in self.signals]


@dataclass(frozen=True)
class EcgRecord:
    header: SignalHeader
    samples: np.ndarray = field(repr=False)  # (n_signals, n_samples), mV
    label: str = OTHER

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[0] != self.header.n_signals:
            raise MalformedHeader(
                f"sample matrix shape {self.samples.shape} does not match {self.header.n_signals} signals"
            )
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("record contains non-finite samples")
        self.samples.setflags(write=False)

    @property
    def name(self) -> str:
        return self.header.record_name

    @property
    def fs(self) -> float:
        return self.header.sampling_rate


def _to_text(data: bytes | str) -> str:
    if isinstance(data, bytes):
        try:
            return data.decode("ascii")
        except UnicodeDecodeError:
            return data.decode("latin-1")
    return data


def _parse_format(token: str) -> int:
    # "16", "16x2" (samples per frame), "16:3" (skew), "16+24" (byte offset)
    m = re.match(r"^(\d+)", token)
    if not m:
        raise MalformedHeader(f"bad storage format field {token!r}")
    fmt = int(m.group(1))
    if fmt != 16:
        raise UnsupportedFormat(f"storage format {fmt} (only 16 is supported)")
    if token != m.group(1):
        raise UnsupportedFormat(f"format modifiers are not supported: {token!r}")
    return fmt


def _parse_signal_line(line: str, index: int) -> SignalSpec:
    tokens = line.split()
    if len(tokens) < 2:
        raise MalformedHeader(f"signal line {index} has too few fields: {line!r}")
    file_name = tokens[0]
    fmt = _parse_format(tokens[1])

    gain, baseline, units = DEFAULT_GAIN, None, "mV"
    if len(tokens) > 2:
        m = _GAIN_RE.match(tokens[2])
        if m is None:
            raise MalformedHeader(f"bad gain field {tokens[2]!r} on signal line {index}")
        g = float(m.group("gain"))
        gain = g if g > 0 else DEFAULT_GAIN
        if m.group("baseline") is not None:
            baseline = int(m.group("baseline"))
        units = m.group("units") or "mV"

    def int_field(pos: int, default: int | None):
        if len(tokens) <= pos:
            return default
        try:
            return int(tokens[pos])
        except ValueError as exc:
            raise MalformedHeader(f"bad integer field {tokens[pos]!r} on signal line {index}") from exc

    adc_res = int_field(3, DEFAULT_ADC_RESOLUTION)
    adc_zero = int_field(4, 0)
    init_value = int_field(5, 0)
    checksum = int_field(6, None)
    block_size = int_field(7, 0)
    lead = " ".join(tokens[8:]) if len(tokens) > 8 else f"sig{index}"
    return SignalSpec(
        file_name=file_name,
        lead_name=lead,
        adc_gain=gain,
        # a missing baseline equals the ADC zero, which itself defaults to 0
        adc_baseline=adc_zero if baseline is None else baseline,
        storage_format=fmt,
        units=units,
        adc_resolution=adc_res,
        adc_zero=adc_zero,
        initial_value=init_value,
        checksum=checksum,
        block_size=block_size,
    )


def parse_header(data: bytes | str) -> SignalHeader:
    """Parse the text of a WFDB ``.hea`` file.

    Raises
    ------
    MalformedHeader
        When the record line is missing or the number of signal lines does not
        match the declared signal count.
    UnsupportedFormat
        When any signal uses a storage format other than 16, or the record is
        multi-segment.
    """
    text = _to_text(data)
    comments: list[str] = []
    lines: list[str] = []
    for raw in text.splitlines():
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            comments.append(stripped)
        else:
            lines.append(stripped)
    if not lines:
        raise MalformedHeader("missing record line")

    rec = lines[0].split()
    if len(rec) < 2:
        raise MalformedHeader(f"record line needs at least a name and signal count: {lines[0]!r}")
    name = rec[0]
    if "/" in name:
        raise UnsupportedFormat("multi-segment records are not supported")
    try:
        n_signals = int(rec[1])
        fs = float(rec[2].split("/")[0]) if len(rec) > 2 else 250.0
        n_samples = int(rec[3]) if len(rec) > 3 else 0
    except ValueError as exc:
        raise MalformedHeader(f"bad record line {lines[0]!r}") from exc

    signal_lines = lines[1:]
    if len(signal_lines) != n_signals:
        raise MalformedHeader(
            f"record line declares {n_signals} signals, found {len(signal_lines)} signal lines"
        )
    signals = tuple(_parse_signal_line(l, i) for i, l in enumerate(signal_lines))
    return SignalHeader(name, n_signals, fs, n_samples, signals, tuple(comments))


def _fmt_number(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_header(header: SignalHeader) -> str:
    """Serialise a header back to ``.hea`` text (inverse of :func:`parse_header`)."""
    out = [
        f"{header.record_name} {header.n_signals} {_fmt_number(header.sampling_rate)} {header.n_samples}"
    ]
    for s in header.signals:
        gain = f"{_fmt_number(s.adc_gain)}({s.adc_baseline})/{s.units}"
        fields = [s.file_name, str(s.storage_format), gain, str(s.adc_resolution),
                  str(s.adc_zero), str(s.initial_value)]
        # fields are positional: a missing checksum implies nothing follows it
        if s.checksum is not None:
            fields += [str(s.checksum), str(s.block_size), s.lead_name]
        out.append(" ".join(fields))
    out.extend(header.comments)
    return "\n".join(out) + "\n"


def wfdb_checksum(adu: np.ndarray) -> int:
    """16-bit two's-complement sum of a signal's samples."""
    total = int(np.asarray(adu, dtype=np.int64).sum()) & 0xFFFF
    return total - 0x10000 if total >= 0x8000 else total


def decode_adu(header: SignalHeader, data: bytes, *, strict: bool = False) -> np.ndarray:
    """Decode interleaved format-16 bytes into raw adu values, shape (n_signals, n_samples)."""
    n_sig = header.n_signals
    n = header.n_samples
    if n == 0:
        n = len(data) // (2 * n_sig)
    needed = 2 * n_sig * n
    if len(data) < needed:
        raise TruncatedData(f"{header.record_name}: need {needed} bytes, got {len(data)}")
    frames = np.frombuffer(data, dtype="<i2", count=n_sig * n).reshape(n, n_sig)
    adu = frames.T.astype(np.int64)
    if strict:
        for i, s in enumerate(header.signals):
            if s.checksum is not None and wfdb_checksum(adu[i]) != s.checksum:
                raise ChecksumMismatch(f"{header.record_name}: checksum mismatch on lead {s.lead_name!r}")
    return adu


def read_signals(header: SignalHeader, data: bytes, *, strict: bool = False) -> EcgRecord:
    """Decode format-16 sample bytes into a record in millivolts.

    Bytes past the declared sample count are ignored. With ``strict`` the
    per-signal checksums from the header are verified.
    """
    adu = decode_adu(header, data, strict=strict)
    gain = np.array([s.adc_gain for s in header.signals])[:, None]
    base = np.array([s.adc_baseline for s in header.signals], dtype=np.float64)[:, None]
    mv = (adu - base) / gain
    return EcgRecord(header, np.ascontiguousarray(mv), extract_label(header.comments))


def extract_label(header_comments: Iterable[str]) -> str:
    """Map header comment lines to ``"MI"``, ``"Normal"`` or ``"Other"``.

    The ``Reason for admission`` line decides when present; otherwise every
    comment is searched. Myocardial infarction wins over healthy control.
    """
    comments = [c.lstrip("#").strip() for c in header_comments]
    reason = [c for c in comments if c.lower().startswith("reason for admission")]
    pool = reason or comments
    text = "\n".join(pool).lower()
    if "myocardial infarction" in text:
        return MI
    if "healthy control" in text:
        return NORMAL
    return OTHER


def select_lead(record: EcgRecord, lead_name: str) -> np.ndarray:
    wanted = lead_name.strip().lower()
    for i, name in enumerate(record.header.lead_names):
        if name.strip().lower() == wanted:
            return record.samples[i]
    raise LeadNotFound(f"{record.name}: no lead {lead_name!r} among {record.header.lead_names}")


def load_record(hea_path: str | Path, *, strict: bool = False) -> EcgRecord:
    """Read a ``.hea``/``.dat`` pair from disk."""
    hea_path = Path(hea_path)
    header = parse_header(hea_path.read_bytes())
    files = {s.file_name for s in header.signals}
    if len(files) != 1:
        raise UnsupportedFormat(f"{header.record_name}: signals spread over several files {sorted(files)}")
    dat_path = hea_path.parent / files.pop()
    return read_signals(header, dat_path.read_bytes(), strict=strict)


def write_record(directory: str | Path, record: EcgRecord) -> Path:
    """Write a record as a format-16 ``.hea``/``.dat`` pair. Returns the header path.

    Samples are quantised with each signal's gain and baseline; checksums and
    initial values in the written header are recomputed from the data.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    h = record.header
    gain = np.array([s.adc_gain for s in h.signals])[:, None]
    base = np.array([s.adc_baseline for s in h.signals])[:, None]
    adu = np.rint(record.samples * gain + base).astype(np.int64)
    if adu.size and (adu.min() < -32768 or adu.max() > 32767):
        raise ValueError(f"{h.record_name}: samples overflow 16-bit storage at the declared gain")
    signals = tuple(
        SignalSpec(
            file_name=f"{h.record_name}.dat",
            lead_name=s.lead_name,
            adc_gain=s.adc_gain,
            adc_baseline=s.adc_baseline,
            units=s.units,
            adc_resolution=s.adc_resolution,
            adc_zero=s.adc_zero,
            initial_value=int(adu[i, 0]) if adu.shape[1] else 0,
            checksum=wfdb_checksum(adu[i]),
            block_size=s.block_size,
        )
        for i, s in enumerate(h.signals)
    )
    header = SignalHeader(h.record_name, h.n_signals, h.sampling_rate, adu.shape[1], signals, h.comments)
    (directory / f"{h.record_name}.dat").write_bytes(adu.T.astype("<i2").tobytes())
    hea = directory / f"{h.record_name}.hea"
    hea.write_text(write_header(header), encoding="ascii")
    return hea


def find_headers(root: str | Path) -> list[Path]:
    """All ``.hea`` files below ``root`` in sorted order."""
    return sorted(Path(root).rglob("*.hea"))


def admitted(records: Sequence[EcgRecord]) -> list[EcgRecord]:
    """Keep only Normal and MI records; other diagnoses never enter the pipeline."""
    return [r for r in records if r.label in (NORMAL, MI)]


def write_manifest(path: str | Path, records: Sequence[EcgRecord]) -> None:
    lines = [f"{r.name}\t{r.label}\t{r.header.n_samples}\n" for r in admitted(records)]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_manifest(path: str | Path) -> list[tuple[str, str, int]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        name, label, n = line.split("\t")
        rows.append((name, label, int(n)))
    return rows
