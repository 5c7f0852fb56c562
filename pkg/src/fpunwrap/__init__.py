"""Unwrapping of lattice-structured 3D fingerprint point clouds into 2D
grayscale images, plus protocol and metric tools for matcher evaluation."""

from .bspline import SplineFit, SplineFitError, evaluate_curve, fit_slice
from .cloud import GridFormatError, PointCloudGrid, load_grid, save_grid, validate_grid
from .evaluation import compute_cmc, compute_eer, gen_verification_pairs, load_scores
from .raster import GrayImage, rasterize, read_pgm, write_pgm
from .unwrap import detrend, fit_all_rows, project, unwrap_x, unwrap_y

__version__ = "0.1.0"

__all__ = [
    "SplineFit",
    "SplineFitError",
    "evaluate_curve",
    "fit_slice",
    "GridFormatError",
    "PointCloudGrid",
    "load_grid",
    "save_grid",
    "validate_grid",
    "compute_cmc",
    "compute_eer",
    "gen_verification_pairs",
    "load_scores",
    "GrayImage",
    "rasterize",
    "read_pgm",
    "write_pgm",
    "detrend",
    "fit_all_rows",
    "project",
    "unwrap_x",
    "unwrap_y",
]
