"""Clamped B-spline basis evaluation and least-squares fitting of one slice.

A slice is fitted in function form, ``z = f(x)``: the spline parameter of a
data point is its own x coordinate, so the fitted height at any x inside the
slice domain is available directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = [
    "SplineFit",
    "SplineFitError",
    "build_knot_vector",
    "basis_value",
    "basis_matrix",
    "fit_slice",
    "evaluate_curve",
]

# pivots below this fraction of the largest normal-matrix diagonal are singular
PIVOT_RTOL = 1e-12


class SplineFitError(ValueError):
    """The least-squares system for a slice cannot be solved."""

    def __init__(self, message, segment=None):
        super().__init__(message)
        self.segment = segment


@dataclass(frozen=True, eq=False)
class SplineFit:
    """Fitted curve of one slice.

    ``control_points`` has ``degree + segments`` entries and ``knots`` has
    ``len(control_points) + degree + 1`` entries, clamped at both ends.
    """

    degree: int
    segments: int
    knots: np.ndarray
    control_points: np.ndarray
    domain: tuple[float, float]

    @property
    def n_control(self) -> int:
        return self.degree + self.segments

    def __call__(self, x):
        return evaluate_curve(self, x)


def build_knot_vector(k: int, s: int, domain: tuple[float, float]) -> np.ndarray:
    """Clamped knot vector with ``s - 1`` uniformly spaced interior knots.

    >>> build_knot_vector(2, 1, (0.0, 1.0)).tolist()
    [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]
    """
    x_min, x_max = float(domain[0]), float(domain[1])
    if not x_min < x_max:
        raise ValueError(f"degenerate domain ({x_min}, {x_max})")
    if k < 0 or s < 1:
        raise ValueError(f"need k >= 0 and s >= 1, got k={k}, s={s}")
    # x_min + j*width/s rather than linspace keeps e.g. 900/8 steps exact
    interior = [x_min + j * (x_max - x_min) / s for j in range(1, s)]
    knots = np.array([x_min] * (k + 1) + interior + [x_max] * (k + 1), dtype=float)
    return knots


def _check_domain(knots, t):
    if not knots[0] <= t <= knots[-1]:
        raise ValueError(f"parameter {t} outside knot domain [{knots[0]}, {knots[-1]}]")


def basis_value(i: int, k: int, t: float, knots) -> float:
    """Evaluate ``N_{i,k}(t)`` with the Cox-de Boor recursion.

    Terms with a zero denominator are taken as zero. The last non-empty knot
    span is closed on the right, so the last basis function is 1 at the right
    end of the domain.
    """
    knots = np.asarray(knots, dtype=float)
    n_basis = len(knots) - k - 1
    if not 0 <= i < n_basis:
        raise IndexError(f"basis index {i} out of range [0, {n_basis})")
    _check_domain(knots, t)
    return _cox_de_boor(i, k, float(t), knots)


def _cox_de_boor(i, k, t, knots):
    if k == 0:
        lo, hi = knots[i], knots[i + 1]
        if lo <= t < hi:
            return 1.0
        if t == knots[-1] and hi == knots[-1] and lo < hi:
            return 1.0
        return 0.0
    value = 0.0
    den = knots[i + k] - knots[i]
    if den != 0.0:
        value += (t - knots[i]) / den * _cox_de_boor(i, k - 1, t, knots)
    den = knots[i + k + 1] - knots[i + 1]
    if den != 0.0:
        value += (knots[i + k + 1] - t) / den * _cox_de_boor(i + 1, k - 1, t, knots)
    return value


def basis_matrix(xs, knots, k: int) -> np.ndarray:
    """Collocation matrix ``N[p, i] = N_{i,k}(xs[p])``, vectorised over points."""
    knots = np.asarray(knots, dtype=float)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if xs.size and (xs.min() < knots[0] or xs.max() > knots[-1]):
        raise ValueError("parameters outside knot domain")
    n_spans = len(knots) - 1
    lo, hi = knots[:-1], knots[1:]
    N = ((xs[:, None] >= lo) & (xs[:, None] < hi)).astype(float)
    # closed-right convention: right endpoint belongs to the last non-empty span
    last = np.flatnonzero(lo < hi)[-1]
    N[xs == knots[-1], last] = 1.0

    for d in range(1, k + 1):
        n_cols = n_spans - d
        out = np.zeros((xs.size, n_cols))
        left_den = knots[d : d + n_cols] - knots[:n_cols]
        right_den = knots[d + 1 : d + 1 + n_cols] - knots[1 : 1 + n_cols]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den != 0.0, (xs[:, None] - knots[:n_cols]) / left_den, 0.0)
            right = np.where(
                right_den != 0.0, (knots[d + 1 : d + 1 + n_cols] - xs[:, None]) / right_den, 0.0
            )
        out += left * N[:, :n_cols]
        out += right * N[:, 1 : n_cols + 1]
        N = out
    return N


def _segment_support(xs, knots, k, s):
    """Index of the first knot span (segment) containing no data point, or None."""
    breaks = knots[k : k + s + 1]
    left = np.searchsorted(xs, breaks[:-1], side="left")
    right = np.searchsorted(xs, breaks[1:], side="right")
    empty = np.flatnonzero(right - left == 0)
    return int(empty[0]) if empty.size else None


class _SliceDesign:
    """Knots, collocation matrix and normal-equation factor for one x layout.

    Rows of a lattice usually share their x samples, so the factorisation is
    built once and reused for every right-hand side.
    """

    def __init__(self, xs, k, s):
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 1 or xs.size < 2:
            raise SplineFitError("slice needs at least two points")
        if np.any(np.diff(xs) <= 0):
            raise SplineFitError("slice x values must be strictly increasing")
        n = k + s
        if xs.size < n:
            raise SplineFitError(f"slice has {xs.size} points, needs at least {n}")
        self.xs, self.k, self.s = xs, k, s
        self.domain = (float(xs[0]), float(xs[-1]))
        self.knots = build_knot_vector(k, s, self.domain)
        empty = _segment_support(xs, self.knots, k, s)
        if empty is not None:
            raise SplineFitError(f"segment {empty} contains no data points", segment=empty)
        self.N = basis_matrix(xs, self.knots, k)
        A = self.N.T @ self.N
        try:
            self._factor = cho_factor(A, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SplineFitError(f"normal matrix is singular: {exc}") from None
        pivots = np.diag(self._factor[0]) ** 2
        if pivots.min() < PIVOT_RTOL * np.diag(A).max():
            raise SplineFitError(
                f"normal matrix is numerically singular at pivot {int(pivots.argmin())}"
            )

    def solve(self, zs) -> SplineFit:
        zs = np.asarray(zs, dtype=float)
        if zs.shape != self.xs.shape:
            raise SplineFitError("xs and zs differ in length")
        n = self.k + self.s
        if np.all(zs == zs[0]):
            # constants are reproduced exactly by partition of unity
            P = np.full(n, zs[0])
        else:
            P = cho_solve(self._factor, self.N.T @ zs)
        if not np.all(np.isfinite(P)):
            raise SplineFitError("non-finite control points")
        return SplineFit(self.k, self.s, self.knots, P, self.domain)


def fit_slice(xs, zs, k: int = 2, s: int = 8) -> SplineFit:
    """Least-squares spline ``z = f(x)`` through one slice of points.

    Solves the normal equations ``N^T N P = N^T z`` by Cholesky factorisation.
    Raises :class:`SplineFitError` when a segment has no supporting data or the
    system is numerically singular.
    """
    return _SliceDesign(xs, k, s).solve(zs)


def evaluate_curve(fit: SplineFit, x):
    """``sum_i P_i N_{i,k}(x)``; ``x`` may be a scalar or an array."""
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    lo, hi = fit.domain
    if xs.size and (xs.min() < lo or xs.max() > hi):
        raise ValueError(f"x outside fit domain [{lo}, {hi}]")
    P = fit.control_points
    if np.all(P == P[0]):
        z = np.full(xs.shape, P[0])
    else:
        z = basis_matrix(xs, fit.knots, fit.degree) @ P
    return float(z[0]) if scalar else z
