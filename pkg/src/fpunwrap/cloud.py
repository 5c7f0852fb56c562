"""Lattice point clouds: data model, text file format, validation, cropping.

File layout (ASCII, LF line endings)::

    P3DGRID 1
    <width> <height>
    unit <label>
    x y z            # width*height lines, row-major, row = constant y
    nan nan nan      # masked cell

Invalid cells are kept in place and flagged in ``mask`` so that lattice
indexing survives; their coordinates are stored as NaN.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "MAGIC",
    "GridFormatError",
    "GridHeader",
    "PointCloudGrid",
    "Violation",
    "load_grid",
    "save_grid",
    "validate_grid",
    "largest_valid_rect",
    "crop_largest_valid_rect",
]

log = logging.getLogger(__name__)

MAGIC = "P3DGRID 1"
HEADER_LINES = 3


class GridFormatError(ValueError):
    """Malformed grid file. ``line`` is the 1-based offending line, if known."""

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path


@dataclass(frozen=True)
class GridHeader:
    width: int
    height: int
    unit: str = "unit"
    source: str = ""

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.width}x{self.height}")


@dataclass(eq=False)
class PointCloudGrid:
    """``height`` rows by ``width`` columns of (x, y, z) samples.

    ``points`` has shape ``(height, width, 3)``; ``mask`` is True for valid
    samples. Columns run along x (finger width), rows along y (finger length).
    """

    points: np.ndarray
    mask: np.ndarray
    unit: str = "unit"
    source: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)

    @classmethod
    def from_xyz(cls, x, y, z, mask=None, unit="unit", source=""):
        points = np.stack(np.broadcast_arrays(x, y, z), axis=-1).astype(float)
        if mask is None:
            mask = np.all(np.isfinite(points), axis=-1)
        mask = np.asarray(mask, dtype=bool)
        points = points.copy()
        points[~mask] = np.nan
        return cls(points, mask, unit, source)

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]

    @property
    def x(self) -> np.ndarray:
        return self.points[..., 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[..., 1]

    @property
    def z(self) -> np.ndarray:
        return self.points[..., 2]

    @property
    def header(self) -> GridHeader:
        return GridHeader(self.width, self.height, self.unit, self.source)

    def equals(self, other: "PointCloudGrid") -> bool:
        """Bitwise equality of shape, mask and valid coordinates."""
        return (
            self.points.shape == other.points.shape
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.points[self.mask], other.points[other.mask])
            and self.unit == other.unit
        )


@dataclass(frozen=True)
class Violation:
    rule: str
    row: int | None = None
    col: int | None = None
    detail: str = field(default="", compare=False)

    def __str__(self):
        where = "" if self.row is None else f" at row {self.row}, column {self.col}"
        return f"{self.rule}{where}: {self.detail}" if self.detail else f"{self.rule}{where}"


def _previous_valid(mask: np.ndarray, axis: int) -> np.ndarray:
    """For every cell, index of the previous valid cell along ``axis`` (-1 if none)."""
    m = np.moveaxis(mask, axis, -1)
    idx = np.where(m, np.arange(m.shape[-1]), -1)
    last = np.maximum.accumulate(idx, axis=-1)
    prev = np.full_like(last, -1)
    prev[..., 1:] = last[..., :-1]
    return np.moveaxis(prev, -1, axis)


def _monotone_violations(coord, mask, axis):
    """Cells (row, col) whose coordinate does not exceed the previous valid one."""
    prev = _previous_valid(mask, axis)
    has_prev = mask & (prev >= 0)
    safe = np.where(has_prev, prev, 0)
    prev_val = np.take_along_axis(coord, safe, axis=axis)
    with np.errstate(invalid="ignore"):
        bad = has_prev & ~(coord > prev_val)
    return np.argwhere(bad)


def validate_grid(grid: PointCloudGrid) -> list[Violation]:
    """All invariant violations of ``grid``; empty when the grid is well formed."""
    out = []
    pts, mask = np.asarray(grid.points), np.asarray(grid.mask)
    if pts.ndim != 3 or pts.shape[-1] != 3:
        return [Violation("structure", detail=f"points must have shape (H, W, 3), got {pts.shape}")]
    if mask.shape != pts.shape[:2]:
        return [
            Violation(
                "structure",
                detail=f"mask has {mask.size} cells, expected {pts.shape[0] * pts.shape[1]}",
            )
        ]
    finite = np.all(np.isfinite(pts), axis=-1)
    for r, c in np.argwhere(mask & ~finite):
        out.append(Violation("finite", int(r), int(c), "valid point has non-finite coordinate"))
    ok = mask & finite
    for r, c in _monotone_violations(pts[..., 0], ok, axis=1):
        out.append(Violation("x-monotone", int(r), int(c), "x not increasing along row"))
    for r, c in _monotone_violations(pts[..., 1], ok, axis=0):
        out.append(Violation("y-monotone", int(r), int(c), "y not increasing along column"))
    return out


def _parse_header(lines, path):
    if len(lines) < HEADER_LINES:
        raise GridFormatError("truncated header", line=len(lines) + 1, path=path)
    if lines[0].strip() != MAGIC:
        raise GridFormatError(f"expected magic {MAGIC!r}", line=1, path=path)
    dims = lines[1].split()
    try:
        if len(dims) != 2:
            raise ValueError
        width, height = int(dims[0]), int(dims[1])
    except ValueError:
        raise GridFormatError("expected 'width height'", line=2, path=path) from None
    unit_line = lines[2].split(maxsplit=1)
    if not unit_line or unit_line[0] != "unit":
        raise GridFormatError("expected 'unit <label>'", line=3, path=path)
    unit = unit_line[1].strip() if len(unit_line) > 1 else ""
    try:
        return GridHeader(width, height, unit, str(path))
    except ValueError as exc:
        raise GridFormatError(str(exc), line=2, path=path) from None


def _locate_bad_line(lines, path):
    for offset, text in enumerate(lines):
        fields = text.split()
        try:
            if len(fields) != 3:
                raise ValueError(f"expected 3 values, found {len(fields)}")
            [float(v) for v in fields]
        except ValueError as exc:
            raise GridFormatError(str(exc), line=HEADER_LINES + 1 + offset, path=path) from None
    raise GridFormatError("unparseable point records", path=path)


def load_grid(path, validate: bool = True) -> PointCloudGrid:
    """Read a grid file; cells with any non-finite coordinate are masked.

    Raises :class:`GridFormatError` naming the offending line for malformed
    headers, bad point records, a wrong record count, or (unless
    ``validate`` is false) a lattice that is not monotone among valid points.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except UnicodeDecodeError as exc:
        line = path.read_bytes()[: exc.start].count(b"\n") + 1
        raise GridFormatError("non-ASCII byte", line=line, path=path) from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    header = _parse_header(lines, path)
    body = lines[HEADER_LINES:]
    expected = header.width * header.height
    if len(body) != expected:
        raise GridFormatError(
            f"header declares {expected} points, file has {len(body)}",
            line=HEADER_LINES + min(len(body), expected) + 1,
            path=path,
        )
    try:
        flat = np.loadtxt(body, dtype=float, ndmin=2, comments=None)
        if flat.shape != (expected, 3):
            raise ValueError
    except ValueError:
        _locate_bad_line(body, path)
        raise  # pragma: no cover
    points = flat.reshape(header.height, header.width, 3)
    mask = np.all(np.isfinite(points), axis=-1)
    points[~mask] = np.nan
    grid = PointCloudGrid(points, mask, header.unit, str(path))
    if not validate:
        return grid
    bad = [v for v in validate_grid(grid) if v.row is not None]
    if bad:
        first = min(bad, key=lambda v: (v.row, v.col))
        line = HEADER_LINES + 1 + first.row * header.width + first.col
        raise GridFormatError(f"lattice not monotone ({first.rule})", line=line, path=path)
    return grid


def _format_points(points, mask):
    rows = points.reshape(-1, 3).tolist()
    flags = mask.reshape(-1).tolist()
    # repr gives the shortest string that round-trips the double exactly
    return "".join(
        f"{x!r} {y!r} {z!r}\n" if ok else "nan nan nan\n" for (x, y, z), ok in zip(rows, flags)
    )


def save_grid(grid: PointCloudGrid, path) -> None:
    """Write ``grid`` so that :func:`load_grid` reproduces it bit for bit."""
    path = Path(path)
    unit = grid.unit.replace("\n", " ").strip()
    head = f"{MAGIC}\n{grid.width} {grid.height}\nunit {unit}\n"
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(head)
        fh.write(_format_points(grid.points, grid.mask))


def largest_valid_rect(mask: np.ndarray) -> tuple[int, int, int, int]:
    """``(row, col, height, width)`` of the largest all-True rectangle.

    Ties go to the smallest ``(row, col)`` origin.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("grid has no valid points")
    H, W = mask.shape
    heights = np.zeros(W, dtype=int)
    best = (0, 0, 0, 0, 0)  # area, -row, -col, height, width

    def consider(area, top, left, h, w):
        nonlocal best
        key = (area, -top, -left)
        if key > best[:3]:
            best = (area, -top, -left, h, w)

    for r in range(H):
        heights = np.where(mask[r], heights + 1, 0)
        hs = heights.tolist()
        stack = []  # column indices with non-decreasing heights
        for c in range(W + 1):
            h_cur = hs[c] if c < W else 0
            while stack and hs[stack[-1]] >= h_cur:
                h = hs[stack.pop()]
                left = stack[-1] + 1 if stack else 0
                if h:
                    consider(h * (c - left), r - h + 1, left, h, c - left)
            stack.append(c)
    _, nrow, ncol, h, w = best
    return -nrow, -ncol, h, w


def crop_largest_valid_rect(grid: PointCloudGrid) -> PointCloudGrid:
    """Sub-grid covering the largest rectangle of valid samples."""
    r, c, h, w = largest_valid_rect(grid.mask)
    log.debug("crop %dx%d at row %d, column %d", w, h, r, c)
    return PointCloudGrid(
        grid.points[r : r + h, c : c + w].copy(),
        grid.mask[r : r + h, c : c + w].copy(),
        grid.unit,
        grid.source,
    )
