"""Segment-to-image rendering and binary PGM (P5) I/O."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .errors import MalformedPgm, SegmentTooShort
from .sigprep import BeatSegment

IMAGE_SIZE = 128
FOREGROUND = 255


@dataclass(frozen=True)
class EcgImage:
    pixels: np.ndarray = field(repr=False)  # (H, W) uint8
    label: str
    provenance: str = ""
    group: str = ""  # source record, used for patient-level splitting

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"image must be 2-D, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255) or np.any(px != np.rint(px)):
                raise ValueError("pixel intensities must be integers in [0, 255]")
            px = px.astype(np.uint8)
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def amplitude_rows(samples: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    v = np.asarray(samples, dtype=np.float64)
    vmax, vmin = v.max(), v.min()
    if vmax == vmin:
        return np.full(v.size, size // 2, dtype=np.int64)
    return np.rint((vmax - v) / (vmax - vmin) * (size - 1)).astype(np.int64)


def render(segment: BeatSegment | np.ndarray, size: int = IMAGE_SIZE, *, label: str | None = None) -> EcgImage:
    """Draw a segment as a 1-pixel white trace on black.

    Amplitude is min-max normalised per segment (row 0 is the maximum), time is
    binned by flooring into ``size`` columns. Each column's min..max row span
    is filled, and the vertical gap between neighbouring columns is split
    between them so the trace stays 8-connected.
    """
    if isinstance(segment, BeatSegment):
        samples, lbl, prov, group = segment.samples, segment.label, segment.segment_id, segment.source_record
    else:
        samples, lbl, prov, group = np.asarray(segment), label or "", "", ""
    n = samples.size
    if n < size:
        raise SegmentTooShort(f"segment has {n} samples, need at least {size}")

    rows = amplitude_rows(samples, size)
    cols = (np.arange(n) * size) // n
    top = np.full(size, size, dtype=np.int64)
    bot = np.full(size, -1, dtype=np.int64)
    np.minimum.at(top, cols, rows)
    np.maximum.at(bot, cols, rows)

    lo, hi = top.copy(), bot.copy()
    for c in range(size - 1):
        a0, a1, b0, b1 = top[c], bot[c], top[c + 1], bot[c + 1]
        if b0 > a1 + 1:  # next column sits lower
            gap = b0 - a1 - 1
            hi[c] = max(hi[c], a1 + (gap + 1) // 2)
            lo[c + 1] = min(lo[c + 1], a1 + (gap + 1) // 2 + 1)
        elif a0 > b1 + 1:  # next column sits higher
            gap = a0 - b1 - 1
            lo[c] = min(lo[c], a0 - (gap + 1) // 2)
            hi[c + 1] = max(hi[c + 1], a0 - (gap + 1) // 2 - 1)

    r = np.arange(size)[:, None]
    img = ((r >= lo[None, :]) & (r <= hi[None, :])).astype(np.uint8) * FOREGROUND
    return EcgImage(img, lbl, prov, group)


# --------------------------------------------------------------------------
# PGM


def encode_pgm(image: EcgImage | np.ndarray) -> bytes:
    px = image.pixels if isinstance(image, EcgImage) else np.asarray(image, dtype=np.uint8)
    h, w = px.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + px.astype(np.uint8).tobytes()


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_pgm(data: bytes, *, label: str = "", provenance: str = "", group: str = "") -> EcgImage:
    if not data.startswith(b"P5"):
        raise MalformedPgm(f"bad magic {data[:2]!r}, expected b'P5'")
    pos = 2
    fields = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise MalformedPgm("truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise MalformedPgm(f"non-numeric PGM header fields {fields!r}") from exc
    if w <= 0 or h <= 0:
        raise MalformedPgm(f"bad dimensions {w}x{h}")
    if maxval != 255:
        raise MalformedPgm(f"maxval {maxval}, only 255 is supported")
    if pos >= len(data) or data[pos : pos + 1] not in (b" ", b"\n", b"\r", b"\t"):
        raise MalformedPgm("missing whitespace after maxval")
    pos += 1
    body = data[pos : pos + w * h]
    if len(body) != w * h:
        raise MalformedPgm(f"expected {w * h} pixel bytes, got {len(body)}")
    px = np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()
    return EcgImage(px, label, provenance, group)


def write_pgm(image: EcgImage, destination: str | Path | BinaryIO) -> None:
    data = encode_pgm(image)
    if hasattr(destination, "write"):
        destination.write(data)
    else:
        Path(destination).write_bytes(data)


def read_pgm(source: str | Path | BinaryIO, **meta) -> EcgImage:
    data = source.read() if hasattr(source, "read") else Path(source).read_bytes()
    return decode_pgm(data, **meta)


def write_image_dir(directory: str | Path, images: Sequence[EcgImage]) -> None:
    """``NNNNNNN.pgm`` files plus ``images.tsv`` (id, label, provenance, group)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, img in enumerate(images):
        image_id = f"{i:07d}"
        write_pgm(img, directory / f"{image_id}.pgm")
        rows.append(f"{image_id}\t{img.label}\t{img.provenance}\t{img.group}\n")
    (directory / "images.tsv").write_text("".join(rows), encoding="utf-8")


def read_image_dir(directory: str | Path) -> list[EcgImage]:
    directory = Path(directory)
    out = []
    for line in (directory / "images.tsv").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        image_id, label, prov, group = (line.split("\t") + ["", "", ""])[:4]
        out.append(read_pgm(directory / f"{image_id}.pgm", label=label, provenance=prov, group=group))
    return out
