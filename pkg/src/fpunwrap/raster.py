"""Grayscale rendering of unwrapped clouds and binary PGM I/O.

Heights map to intensities linearly with the highest point black (0) and the
lowest white (255), so ridges come out dark and valleys light.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .unwrap import UnwrappedCloud

__all__ = [
    "ROUNDING",
    "GrayImage",
    "normalize_heights",
    "median_step",
    "rasterize",
    "write_pgm",
    "read_pgm",
]

log = logging.getLogger(__name__)

ROUNDING = ("half_away", "half_even")
DEGENERATE_LEVEL = 128


@dataclass(eq=False)
class GrayImage:
    pixels: np.ndarray  # (height, width) uint8, row 0 at the smallest y'

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError("pixels must be 2-D")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise ValueError("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _round(v, rounding):
    if rounding == "half_away":
        return np.sign(v) * np.floor(np.abs(v) + 0.5)
    if rounding == "half_even":
        return np.round(v)
    raise ValueError(f"rounding must be one of {ROUNDING}, got {rounding!r}")


def normalize_heights(zs, rounding: str = "half_away") -> np.ndarray:
    """Intensities ``round(255 * (z_max - z) / (z_max - z_min))`` as uint8.

    A constant input has no range to map; every value becomes 128 and a
    warning is issued.
    """
    zs = np.asarray(zs, dtype=float)
    if zs.size == 0 or not np.all(np.isfinite(zs)):
        raise ValueError("heights must be a non-empty array of finite values")
    z_min, z_max = zs.min(), zs.max()
    if z_max == z_min:
        warnings.warn("flat height field; mapping every pixel to mid-gray", RuntimeWarning, stacklevel=2)
        return np.full(zs.shape, DEGENERATE_LEVEL, dtype=np.uint8)
    levels = _round(255.0 * (z_max - zs) / (z_max - z_min), rounding)
    return np.clip(levels, 0, 255).astype(np.uint8)


def median_step(coords: np.ndarray, mask: np.ndarray) -> float:
    """Median x' distance between horizontally adjacent valid samples."""
    both = mask[:, 1:] & mask[:, :-1]
    steps = (coords[:, 1:, 0] - coords[:, :-1, 0])[both]
    if steps.size == 0:
        raise ValueError("no horizontally adjacent valid samples to derive a pixel pitch")
    return float(np.median(steps))


def _support(occupied):
    """Pixels inside the convex hull of the occupied ones."""
    if occupied.all():
        return occupied.copy()
    from skimage.morphology import convex_hull_image

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            hull = convex_hull_image(occupied)
    except Exception:  # collinear or degenerate point sets
        return occupied.copy()
    return hull | occupied


def _fill_holes(values, filled, support):
    """Jacobi-style 4-neighbour averaging until every support pixel has a value."""
    values = np.where(filled, values, 0.0)
    filled = filled.copy()
    todo = support & ~filled
    while todo.any():
        total = np.zeros_like(values)
        count = np.zeros(values.shape, dtype=int)
        v = np.where(filled, values, 0.0)
        f = filled.astype(int)
        total[1:] += v[:-1]
        count[1:] += f[:-1]
        total[:-1] += v[1:]
        count[:-1] += f[1:]
        total[:, 1:] += v[:, :-1]
        count[:, 1:] += f[:, :-1]
        total[:, :-1] += v[:, 1:]
        count[:, :-1] += f[:, 1:]
        ready = todo & (count > 0)
        if not ready.any():
            break
        values[ready] = total[ready] / count[ready]
        filled |= ready
        todo &= ~ready
    return values, filled


def rasterize(
    uc: UnwrappedCloud,
    pixel_pitch: float | None = None,
    background: int = 255,
    rounding: str = "half_away",
) -> GrayImage:
    """Scatter residual heights onto a pixel lattice at ``(x', y')``.

    Each pixel takes the mean residual of the points that land in it (nearest
    pixel centre). Empty pixels inside the convex support are filled by
    repeated 4-neighbour averaging; pixels outside get ``background``. The
    pitch defaults to the median horizontal x' step.
    """
    mask = uc.mask
    if int(mask.sum()) < 2:
        raise ValueError("need at least two valid points to rasterize")
    if pixel_pitch is None:
        pixel_pitch = median_step(uc.coords, mask)
    if not pixel_pitch > 0:
        raise ValueError(f"pixel pitch must be positive, got {pixel_pitch}")
    xp = uc.coords[..., 0][mask]
    yp = uc.coords[..., 1][mask]
    zr = uc.coords[..., 2][mask]
    ix = np.floor((xp - xp.min()) / pixel_pitch + 0.5).astype(np.int64)
    iy = np.floor((yp - yp.min()) / pixel_pitch + 0.5).astype(np.int64)
    width, height = int(ix.max()) + 1, int(iy.max()) + 1
    if width * height < 2:
        raise ValueError("degenerate bounding box: all points fall into one pixel")
    flat = iy * width + ix
    # bincount accumulates in input order, so sums are reproducible
    sums = np.bincount(flat, weights=zr, minlength=width * height).reshape(height, width)
    counts = np.bincount(flat, minlength=width * height).reshape(height, width)
    occupied = counts > 0
    values = np.where(occupied, sums / np.maximum(counts, 1), 0.0)
    values, filled = _fill_holes(values, occupied, _support(occupied))
    pixels = np.full((height, width), background, dtype=np.uint8)
    pixels[filled] = normalize_heights(values[filled], rounding)
    log.debug("rasterized %d points to %dx%d at pitch %.6g", zr.size, width, height, pixel_pitch)
    return GrayImage(pixels)


def write_pgm(img: GrayImage, path) -> None:
    """Binary (P5) graymap with maxval 255."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(Path(path), "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(img.pixels, dtype=np.uint8).tobytes())


def read_pgm(path) -> GrayImage:
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos].decode("ascii"))
    pos += 1  # single whitespace byte after maxval
    magic, width, height, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic != "P5" or maxval != 255:
        raise ValueError(f"unsupported graymap: magic {magic}, maxval {maxval}")
    raw = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return GrayImage(raw.reshape(height, width).copy())
