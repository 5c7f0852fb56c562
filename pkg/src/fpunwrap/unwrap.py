"""Row-wise curve fitting, detrending and arc-length unwrapping.

The stages run in order fit -> detrend -> unwrap_x -> unwrap_y. Height steps
between neighbouring samples are taken on the fitted curves, so the new
coordinates follow the global finger shape while ridge texture only shows
up in the residual heights.

Each row is fitted as ``z = f(t)``. With ``parameter="index"`` (default) the
spline parameter ``t`` is the lattice column index; on evenly spaced rows
this is the same fit as ``parameter="x"`` (``t = x``), but it also follows
rows whose z is not a smooth function of x, such as the flanks of a finger
that turn vertical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .bspline import SplineFitError, _SliceDesign, basis_matrix
from .cloud import PointCloudGrid

__all__ = [
    "PARAMETERS",
    "ANCHORS",
    "RowFitError",
    "DetrendedCloud",
    "UnwrappedCloud",
    "row_parameters",
    "fit_all_rows",
    "detrend",
    "adjacent_distance",
    "unwrap_x",
    "unwrap_y",
    "project",
]

log = logging.getLogger(__name__)

PARAMETERS = ("index", "x")
ANCHORS = ("center", "start")


class RowFitError(SplineFitError):
    def __init__(self, row, cause):
        super().__init__(f"row {row}: {cause}", getattr(cause, "segment", None))
        self.row = row


@dataclass(eq=False)
class DetrendedCloud:
    """Residual heights plus the per-row fits needed by the unwrapping stages.

    ``base`` holds the original x, y and the residual ``z - f_row(t)``;
    ``trend`` holds ``f_row(t)`` for every valid point. Rows without a fit are
    masked out.
    """

    base: PointCloudGrid
    row_fits: list
    trend: np.ndarray
    parameter: str = "index"

    @property
    def mask(self) -> np.ndarray:
        return self.base.mask

    @property
    def residual(self) -> np.ndarray:
        return self.base.z


@dataclass(eq=False)
class UnwrappedCloud:
    """``coords[..., 0:2]`` are the unwrapped x', y'; ``coords[..., 2]`` the residual."""

    coords: np.ndarray
    mask: np.ndarray
    source: DetrendedCloud | None = None

    @property
    def height(self) -> int:
        return self.coords.shape[0]

    @property
    def width(self) -> int:
        return self.coords.shape[1]

    def to_grid(self, unit="unit", source="") -> PointCloudGrid:
        return PointCloudGrid.from_xyz(
            self.coords[..., 0], self.coords[..., 1], self.coords[..., 2], self.mask, unit, source
        )


def row_parameters(grid: PointCloudGrid, parameter: str = "index") -> np.ndarray:
    """Spline parameter of every cell: column index or x coordinate."""
    if parameter == "index":
        return np.broadcast_to(np.arange(grid.width, dtype=float), (grid.height, grid.width))
    if parameter == "x":
        return grid.x
    raise ValueError(f"parameter must be one of {PARAMETERS}, got {parameter!r}")


def fit_all_rows(
    grid: PointCloudGrid,
    k: int = 2,
    partitions: int = 8,
    strict: bool = True,
    parameter: str = "index",
):
    """One least-squares spline per grid row, over the row's valid extent.

    Rows with fewer than ``k + partitions`` valid points get ``None``. A row
    whose system is singular raises :class:`RowFitError` when ``strict``,
    otherwise it is also flagged with ``None``.
    """
    need = k + partitions
    ts = row_parameters(grid, parameter)
    fits = []
    designs = {}
    for i in range(grid.height):
        valid = grid.mask[i]
        n_valid = int(valid.sum())
        if n_valid < need:
            if n_valid:
                log.warning("row %d flagged: %d valid points, need %d", i, n_valid, need)
            fits.append(None)
            continue
        t = ts[i, valid]
        key = t.tobytes()
        try:
            design = designs.get(key)
            if design is None:
                design = designs[key] = _SliceDesign(t, k, partitions)
            fits.append(design.solve(grid.z[i, valid]))
        except SplineFitError as exc:
            if strict:
                raise RowFitError(i, exc) from exc
            log.warning("row %d flagged: %s", i, exc)
            fits.append(None)
    return fits


def _evaluate_rows(ts, mask, fits):
    """Fitted heights ``f_i(t_ij)`` for every valid cell; NaN elsewhere."""
    out = np.full(mask.shape, np.nan)
    cache = {}
    for i, fit in enumerate(fits):
        if fit is None:
            continue
        valid = mask[i]
        if not valid.any():
            continue
        xs = ts[i, valid]
        lo, hi = fit.domain
        if xs.min() < lo or xs.max() > hi:
            raise ValueError(f"row {i}: points outside fit domain [{lo}, {hi}]")
        P = fit.control_points
        if np.all(P == P[0]):
            out[i, valid] = P[0]
            continue
        key = (xs.tobytes(), fit.knots.tobytes(), fit.degree)
        N = cache.get(key)
        if N is None:
            N = cache[key] = basis_matrix(xs, fit.knots, fit.degree)
        out[i, valid] = N @ P
    return out


def detrend(grid: PointCloudGrid, fits: list, parameter: str = "index") -> DetrendedCloud:
    """Subtract each row's fitted curve from its z values.

    ``fits`` must have one entry per row, fitted with the same ``parameter``;
    rows whose entry is ``None`` are masked in the result.
    """
    if len(fits) != grid.height:
        raise ValueError(f"expected {grid.height} row fits, got {len(fits)}")
    has_fit = np.array([f is not None for f in fits], dtype=bool)
    dropped = grid.mask & ~has_fit[:, None]
    if dropped.any():
        log.info("masking %d points in %d unfitted rows", int(dropped.sum()),
                 int(np.any(dropped, axis=1).sum()))
    mask = grid.mask & has_fit[:, None]
    trend = _evaluate_rows(row_parameters(grid, parameter), mask, fits)
    residual = np.where(mask, grid.z - trend, np.nan)
    base = PointCloudGrid.from_xyz(grid.x, grid.y, residual, mask, grid.unit, grid.source)
    return DetrendedCloud(base, list(fits), trend, parameter)


def adjacent_distance(dx, dz):
    """Straight-line distance between two neighbours, ``sqrt(dx**2 + dz**2)``."""
    return np.hypot(dx, dz)


def _anchor_position(valid: np.ndarray, anchor: str) -> int:
    """Position, among the valid samples, of the one that keeps its coordinate.

    ``center`` picks the valid sample closest to the middle of the line
    (lower index on ties), ``start`` the first valid sample.
    """
    idx = np.flatnonzero(valid)
    if anchor == "start":
        return 0
    if anchor != "center":
        raise ValueError(f"anchor must be one of {ANCHORS}, got {anchor!r}")
    return int(np.argmin(np.abs(idx - len(valid) // 2)))


def _unwrap_lines(coord, trend, mask, anchor="center"):
    """Arc-length coordinates along axis 1, zero at each line's anchor sample.

    The new coordinate is ``coord - coord_anchor`` plus the accumulated excess
    of each chord over its projection, so a flat line is reproduced exactly.
    """
    out = np.full(coord.shape, np.nan)
    for i in range(coord.shape[0]):
        valid = mask[i]
        if not valid.any():
            continue
        c = coord[i, valid]
        f = trend[i, valid]
        dc = np.diff(c)
        excess = adjacent_distance(dc, np.diff(f)) - dc
        acc = np.concatenate(([0.0], np.cumsum(excess)))
        a = _anchor_position(valid, anchor)
        out[i, valid] = (c - c[a]) + (acc - acc[a])
    return out


def unwrap_x(dc: DetrendedCloud, anchor: str = "center") -> UnwrappedCloud:
    """Replace x by accumulated chord length along each row's fitted curve.

    A chord spans the raw x step between neighbouring valid samples and the
    fitted height step between them; gaps are bridged by a single chord.
    """
    mask = dc.mask
    missing = [i for i in range(dc.base.height) if mask[i].any() and dc.row_fits[i] is None]
    if missing:
        raise ValueError(f"rows without a fit: {missing[:5]}")
    xp = _unwrap_lines(dc.base.x, dc.trend, mask, anchor)
    coords = np.stack([xp, dc.base.y, dc.residual], axis=-1)
    coords[~mask] = np.nan
    return UnwrappedCloud(coords, mask.copy(), dc)


def unwrap_y(uc: UnwrappedCloud, fits: list | None = None, anchor: str = "center") -> UnwrappedCloud:
    """Replace y by accumulated chord length between adjacent row curves.

    For neighbouring valid cells in a column, the height step is the
    difference of the two rows' fitted curves, each evaluated at its own
    point's lattice position (not at the remapped x').
    """
    dc = uc.source
    if dc is None:
        raise ValueError("unwrap_y needs the detrended cloud produced by unwrap_x")
    mask = uc.mask
    if fits is None:
        trend = dc.trend
    else:
        if len(fits) != uc.height:
            raise ValueError(f"expected {uc.height} row fits, got {len(fits)}")
        missing = [i for i in range(uc.height) if mask[i].any() and fits[i] is None]
        if missing:
            raise ValueError(f"rows without a fit: {missing[:5]}")
        trend = _evaluate_rows(row_parameters(dc.base, dc.parameter), mask, fits)
    yp = _unwrap_lines(dc.base.y.T, trend.T, mask.T, anchor).T
    coords = uc.coords.copy()
    coords[..., 1] = yp
    coords[~mask] = np.nan
    return UnwrappedCloud(coords, mask.copy(), dc)


def project(dc: DetrendedCloud) -> UnwrappedCloud:
    """Residual heights at the original (x, y): detrending without unwrapping."""
    coords = dc.base.points.copy()
    return UnwrappedCloud(coords, dc.mask.copy(), dc)
