"""Nine-crop augmentation: a 3x3 grid of 75% crops, each resized back to full size."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import WrongDimensions
from .raster import EcgImage

CROP_FRACTION = 0.75


def crop_origins(size: int = 128) -> list[tuple[int, int]]:
    """Top-left (row, col) of the nine crops, in output order.

    Corners first, then center, left-center, right-center, top-center,
    bottom-center.
    """
    m = size - int(np.floor(CROP_FRACTION * size))
    h = m // 2
    return [(0, 0), (0, m), (m, 0), (m, m), (h, h), (h, 0), (h, m), (0, h), (m, h)]


def bilinear_resize(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize (``src = dst * (in - 1) / (out - 1)``) in float64."""
    a = np.asarray(pixels, dtype=np.float64)
    in_h, in_w = a.shape

    def axis_weights(n_in: int, n_out: int):
        if n_out == 1:
            src = np.zeros(1)
        else:
            src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    r0, r1, fr = axis_weights(in_h, out_h)
    c0, c1, fc = axis_weights(in_w, out_w)
    rows = a[r0] * (1 - fr)[:, None] + a[r1] * fr[:, None]
    return rows[:, c0] * (1 - fc)[None, :] + rows[:, c1] * fc[None, :]


def to_intensity(values: np.ndarray) -> np.ndarray:
    """Round half up and clamp to [0, 255]."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def nine_crops(image: EcgImage) -> list[EcgImage]:
    """Nine 75% crops of a square image, each bilinearly resized to the input size.

    The pipeline size is 128 (crop 96, offsets 0/16/32); any square side that is
    a multiple of 8 works, so scaled-down desk images share the same geometry.
    """
    h, w = image.shape
    if h != w or h % 8 != 0:
        raise WrongDimensions(f"need a square image with side divisible by 8, got {h}x{w}")
    c = int(np.floor(CROP_FRACTION * h))
    out = []
    for k, (r, col) in enumerate(crop_origins(h)):
        crop = image.pixels[r : r + c, col : col + c]
        px = to_intensity(bilinear_resize(crop, h, w))
        out.append(EcgImage(px, image.label, f"{image.provenance}#crop{k}", image.group))
    return out


def augment_dataset(images: Sequence[EcgImage] | Iterable[EcgImage], enabled: bool = True) -> list[EcgImage]:
    """Each original followed by its nine crops (10x); identity when disabled."""
    images = list(images)
    if not enabled:
        return images
    out: list[EcgImage] = []
    for img in images:
        out.append(img)
        out.extend(nine_crops(img))
    return out
