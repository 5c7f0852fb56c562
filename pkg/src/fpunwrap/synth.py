"""Synthetic finger-like surfaces with closed-form ground truth.

Every surface is a graph ``z = f(x, y)`` that bends along one axis only.
Ridges are added as a z offset ``A sin(2 pi s / wavelength)`` where ``s`` is
the arc length measured on the base surface, so a correct unwrapping yields
ridges with a uniform period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloudGrid

__all__ = [
    "KINDS",
    "SynthSpec",
    "generate",
    "analytic_arc_length",
    "arc_coordinates",
    "ridge_peaks",
    "standard_corpus",
]

KINDS = ("plane", "tilted_plane", "parabolic_cylinder", "circular_half_cylinder")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic surface.

    ``coeff`` is the slope for ``tilted_plane``, the curvature ``a`` of
    ``z = a u**2`` for ``parabolic_cylinder`` and the radius for
    ``circular_half_cylinder``. ``axis`` is the bend direction. On the
    circular cylinder the bend axis is sampled uniformly in angle over
    ``span`` radians; every other axis is sampled every ``spacing``.
    """

    kind: str = "plane"
    width: int = 64
    height: int = 64
    spacing: float = 1.0
    coeff: float = 0.0
    ridge_amplitude: float = 0.0
    ridge_wavelength: float = 8.0
    orientation: str = "along_x"
    axis: str = "x"
    span: float = math.pi
    noise: float = 0.0
    seed: int = 0
    unit: str = "unit"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if self.orientation not in ("along_x", "along_y"):
            raise ValueError(f"orientation must be along_x or along_y, got {self.orientation!r}")
        if self.axis not in ("x", "y"):
            raise ValueError(f"axis must be 'x' or 'y', got {self.axis!r}")
        if self.width < 2 or self.height < 2:
            raise ValueError("grid must be at least 2x2")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if self.ridge_wavelength <= 2 * self.spacing:
            raise ValueError("ridge wavelength must exceed twice the sample spacing")
        if not 0 <= self.ridge_amplitude < self.ridge_wavelength / 4:
            raise ValueError("ridge amplitude must lie in [0, wavelength/4)")
        if self.kind == "circular_half_cylinder":
            if self.coeff <= 0:
                raise ValueError("cylinder radius must be positive")
            if not 0 < self.span <= math.pi:
                raise ValueError("span must lie in (0, pi]")
            step = self.span * self.coeff / (self.n_bend - 1)
            if self.ridge_amplitude and self.orientation[-1] == self.axis and self.ridge_wavelength <= 2 * step:
                raise ValueError("ridge wavelength must exceed twice the arc step")

    @property
    def n_bend(self) -> int:
        return self.width if self.axis == "x" else self.height

    @property
    def n_straight(self) -> int:
        return self.height if self.axis == "x" else self.width


def _bend_profile(spec: SynthSpec):
    """Projected coordinate, height and arc coordinate along the bend axis."""
    n, h, a = spec.n_bend, spec.spacing, spec.coeff
    j = np.arange(n, dtype=float)
    if spec.kind == "circular_half_cylinder":
        theta = (math.pi - spec.span) / 2 + j * (spec.span / (n - 1))
        u = -a * np.cos(theta)
        z = a * np.sin(theta)
        s = a * (theta - theta[0])
        return u, z, s
    u = j * h
    if spec.kind == "plane":
        return u, np.zeros(n), u.copy()
    if spec.kind == "tilted_plane":
        return u, a * u, u * math.sqrt(1.0 + a * a)
    c = (n - 1) * h / 2
    return u, a * (u - c) ** 2, _parabola_arc(a, -c, u - c)


def _parabola_primitive(a, u):
    """Antiderivative of ``sqrt(1 + (2 a u)**2)``."""
    u = np.asarray(u, dtype=float)
    if a == 0:
        return u
    w = 2.0 * a * u
    return (u * np.sqrt(1.0 + w * w)) / 2.0 + np.arcsinh(w) / (4.0 * a)


def _parabola_arc(a, u0, u1):
    return _parabola_primitive(a, u1) - _parabola_primitive(a, u0)


def arc_coordinates(spec: SynthSpec):
    """Arc-length coordinates ``(s_x, s_y)`` of every lattice cell, shape (H, W)."""
    u, _, s_bend = _bend_profile(spec)
    t = np.arange(spec.n_straight, dtype=float) * spec.spacing
    if spec.axis == "x":
        return np.broadcast_to(s_bend, (spec.height, spec.width)), np.broadcast_to(
            t[:, None], (spec.height, spec.width)
        )
    return np.broadcast_to(t, (spec.height, spec.width)), np.broadcast_to(
        s_bend[:, None], (spec.height, spec.width)
    )


def generate(spec: SynthSpec) -> PointCloudGrid:
    """Sample the surface described by ``spec`` on a lattice."""
    H, W = spec.height, spec.width
    u, zb, _ = _bend_profile(spec)
    t = np.arange(spec.n_straight, dtype=float) * spec.spacing
    if spec.axis == "x":
        x = np.broadcast_to(u, (H, W))
        y = np.broadcast_to(t[:, None], (H, W))
        z = np.broadcast_to(zb, (H, W)).copy()
    else:
        x = np.broadcast_to(t, (H, W))
        y = np.broadcast_to(u[:, None], (H, W))
        z = np.broadcast_to(zb[:, None], (H, W)).copy()
    if spec.ridge_amplitude:
        sx, sy = arc_coordinates(spec)
        s = sx if spec.orientation == "along_x" else sy
        z += spec.ridge_amplitude * np.sin(2.0 * math.pi * s / spec.ridge_wavelength)
    if spec.noise:
        z += np.random.default_rng(spec.seed).normal(0.0, spec.noise, size=z.shape)
    return PointCloudGrid.from_xyz(x, y, z, unit=spec.unit, source=f"synth:{spec.kind}")


def analytic_arc_length(spec: SynthSpec, start: int, stop: int, direction: str | None = None) -> float:
    """Closed-form arc length on the base surface between two lattice indices.

    ``direction`` is ``"x"`` (column indices) or ``"y"`` (row indices) and
    defaults to the bend axis.
    """
    direction = direction or spec.axis
    n = spec.width if direction == "x" else spec.height
    if not (0 <= start < n and 0 <= stop < n):
        raise IndexError(f"indices must lie in [0, {n})")
    if direction != spec.axis:
        return abs(stop - start) * spec.spacing
    lo, hi = sorted((start, stop))
    h, a = spec.spacing, spec.coeff
    if spec.kind == "circular_half_cylinder":
        return a * (hi - lo) * spec.span / (spec.n_bend - 1)
    if spec.kind == "plane":
        return (hi - lo) * h
    if spec.kind == "tilted_plane":
        return (hi - lo) * h * math.sqrt(1.0 + a * a)
    c = (spec.n_bend - 1) * h / 2
    return float(_parabola_arc(a, lo * h - c, hi * h - c))


def ridge_peaks(spec: SynthSpec) -> np.ndarray:
    """Arc-length positions of ridge crests along the ridge-normal direction."""
    _, _, s = _bend_profile(spec)
    if spec.orientation[-1] == spec.axis:
        total = float(s[-1])
    else:
        n = spec.width if spec.orientation == "along_x" else spec.height
        total = (n - 1) * spec.spacing
    lam = spec.ridge_wavelength
    return np.arange(lam / 4, total, lam)


def standard_corpus() -> dict[str, SynthSpec]:
    """Small fixed set of surfaces covering every kind and ridge orientation."""
    return {
        "plane": SynthSpec("plane", 48, 40),
        "tilted_plane": SynthSpec("tilted_plane", 48, 40, coeff=1.0, ridge_amplitude=0.5),
        "parabolic_x": SynthSpec(
            "parabolic_cylinder", 96, 48, coeff=0.01, ridge_amplitude=1.0, ridge_wavelength=8.0
        ),
        "parabolic_y": SynthSpec(
            "parabolic_cylinder", 48, 96, coeff=0.01, axis="y", ridge_amplitude=1.0,
            ridge_wavelength=8.0, orientation="along_y",
        ),
        "half_cylinder": SynthSpec(
            "circular_half_cylinder", 315, 32, coeff=100.0, ridge_amplitude=1.0, ridge_wavelength=8.0
        ),
        "noisy_cylinder": SynthSpec(
            "circular_half_cylinder", 160, 40, coeff=60.0, span=2.5, ridge_amplitude=1.0,
            ridge_wavelength=8.0, noise=0.05, seed=7,
        ),
    }
