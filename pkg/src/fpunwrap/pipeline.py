"""Batch conversion of grid files into unwrapped grayscale images.

Per input file: load -> fit rows -> detrend -> unwrap x -> unwrap y ->
rasterize -> write PGM. Files are independent and may be processed by
several worker processes; outputs do not depend on the worker count.
"""

from __future__ import annotations

import hashlib
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .cloud import crop_largest_valid_rect, load_grid, save_grid
from .raster import ROUNDING, rasterize, write_pgm
from .unwrap import ANCHORS, PARAMETERS, detrend, fit_all_rows, unwrap_x, unwrap_y

__all__ = [
    "GRID_SUFFIX",
    "STAGES",
    "ConfigError",
    "PipelineConfig",
    "FileResult",
    "PipelineResult",
    "parse_config",
    "load_config",
    "process_file",
    "run_pipeline",
    "sha256_file",
]

log = logging.getLogger(__name__)

GRID_SUFFIX = ".p3d"
STAGES = ("load", "fit", "detrend", "unwrap_x", "unwrap_y", "rasterize", "write")
MANIFEST = "manifest.tsv"
TIMINGS = "timings.tsv"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    inputs: tuple = ()
    output_dir: str = "out"
    degree: int = 2
    partitions: int = 8
    parameter: str = "index"
    anchor: str = "center"
    pixel_pitch: float | None = None  # None = median x' step
    rounding: str = "half_away"
    background: int = 255
    workers: int = 1
    save_unwrapped: bool = False
    crop: bool = False
    strict_rows: bool = False

    def __post_init__(self):
        if self.degree < 0:
            raise ConfigError("degree must be >= 0")
        if self.partitions < 1:
            raise ConfigError("partitions must be >= 1")
        if self.pixel_pitch is not None and not self.pixel_pitch > 0:
            raise ConfigError("pixel_pitch must be positive or 'auto'")
        if self.parameter not in PARAMETERS:
            raise ConfigError(f"parameter must be one of {PARAMETERS}")
        if self.anchor not in ANCHORS:
            raise ConfigError(f"anchor must be one of {ANCHORS}")
        if self.rounding not in ROUNDING:
            raise ConfigError(f"rounding must be one of {ROUNDING}")
        if not 0 <= self.background <= 255:
            raise ConfigError("background must lie in [0, 255]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def _to_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(name, text):
    if name == "inputs":
        return tuple(p for p in text.replace(",", " ").split() if p)
    if name == "pixel_pitch":
        return None if text.strip().lower() in ("auto", "") else float(text)
    if name in ("degree", "partitions", "background", "workers"):
        return int(text)
    if name in ("save_unwrapped", "crop", "strict_rows"):
        return _to_bool(text)
    return text.strip()


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) over ``base``."""
    known = {f.name for f in fields(PipelineConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, value)
        except ValueError as exc:
            raise ConfigError(f"config line {lineno}: {exc}") from None
    return replace(base or PipelineConfig(), **values)


def load_config(path, base: PipelineConfig | None = None) -> PipelineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, base)


@dataclass
class FileResult:
    source: str
    artifacts: list = field(default_factory=list)  # paths relative to output_dir
    timings: dict = field(default_factory=dict)
    error: str | None = None
    shape: tuple | None = None


@dataclass
class PipelineResult:
    files: list
    manifest: Path | None = None

    @property
    def failures(self):
        return [f for f in self.files if f.error]

    @property
    def status(self) -> int:
        return 1 if self.failures else 0


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def process_file(path, config: PipelineConfig) -> FileResult:
    """Run every stage on one grid file; errors are captured, not raised."""
    path = Path(path)
    out_dir = Path(config.output_dir)
    result = FileResult(str(path))
    clock = time.perf_counter
    t = clock()

    def lap(stage):
        nonlocal t
        now = clock()
        result.timings[stage] = now - t
        t = now

    try:
        grid = load_grid(path)
        if config.crop:
            grid = crop_largest_valid_rect(grid)
        result.shape = (grid.width, grid.height)
        lap("load")
        fits = fit_all_rows(
            grid, config.degree, config.partitions, strict=config.strict_rows, parameter=config.parameter
        )
        lap("fit")
        dc = detrend(grid, fits, config.parameter)
        lap("detrend")
        ux = unwrap_x(dc, config.anchor)
        lap("unwrap_x")
        uy = unwrap_y(ux, anchor=config.anchor)
        lap("unwrap_y")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            img = rasterize(uy, config.pixel_pitch, config.background, config.rounding)
        for w in caught:
            log.warning("%s: %s", path, w.message)
        lap("rasterize")
        pgm = path.stem + ".pgm"
        write_pgm(img, out_dir / pgm)
        result.artifacts.append(pgm)
        if config.save_unwrapped:
            name = path.stem + ".unwrapped" + GRID_SUFFIX
            save_grid(uy.to_grid(grid.unit, str(path)), out_dir / name)
            result.artifacts.append(name)
        lap("write")
    except Exception as exc:  # batch mode reports per-file failures
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def _expand_inputs(inputs):
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files.extend(sorted(p.glob("*" + GRID_SUFFIX)))
        else:
            files.append(p)
    if not files:
        raise ConfigError("no input grid files")
    stems = [f.stem for f in files]
    dupes = sorted({s for s in stems if stems.count(s) > 1})
    if dupes:
        raise ConfigError(f"input names collide in the output directory: {dupes}")
    return files


def _process_one(args):
    return process_file(*args)


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Process every input and write ``manifest.tsv`` and ``timings.tsv``.

    The manifest lists each emitted image or cloud once, as
    ``path<TAB>sha256`` with paths relative to the output directory, in
    sorted order. Timings are kept out of the manifest because they differ
    between runs.
    """
    files = _expand_inputs(config.inputs)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(f, config) for f in files]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_process_one, jobs))
    else:
        results = [_process_one(j) for j in jobs]

    for r in results:
        if r.error:
            log.error("%s: %s", r.source, r.error)
        else:
            total = sum(r.timings.values())
            log.info("%s -> %s (%.3f s)", r.source, ", ".join(r.artifacts), total)

    artifacts = sorted(a for r in results for a in r.artifacts)
    manifest = out_dir / MANIFEST
    with open(manifest, "w", encoding="utf-8", newline="\n") as fh:
        for a in artifacts:
            fh.write(f"{a}\t{sha256_file(out_dir / a)}\n")
    with open(out_dir / TIMINGS, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(("file", "width", "height") + STAGES + ("total", "status")) + "\n")
        for r in results:
            w, h = r.shape or ("", "")
            cells = [f"{r.timings[s]:.6f}" if s in r.timings else "" for s in STAGES]
            status = "ok" if not r.error else "failed"
            fh.write("\t".join([r.source, str(w), str(h), *cells, f"{sum(r.timings.values()):.6f}", status]) + "\n")
    return PipelineResult(results, manifest)
