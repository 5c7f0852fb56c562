"""Command line entry point: ``fpunwrap {unwrap,synth,eval,inspect}``.

Exit codes: 0 success, 1 partial failure (some inputs failed or a check did
not pass), 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .cloud import GridFormatError, load_grid, save_grid, validate_grid
from .pipeline import GRID_SUFFIX, ConfigError, PipelineConfig, load_config, run_pipeline, sha256_file
from .synth import KINDS, SynthSpec, generate, standard_corpus

log = logging.getLogger("fpunwrap")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ unwrap

_FLAG_KEYS = (
    "degree",
    "partitions",
    "parameter",
    "anchor",
    "pixel_pitch",
    "rounding",
    "background",
    "workers",
    "save_unwrapped",
    "crop",
    "strict_rows",
)


def _add_unwrap(sub):
    p = sub.add_parser("unwrap", help="convert grid files into unwrapped PGM images")
    p.add_argument("inputs", nargs="*", help="grid files or directories of *.p3d files")
    p.add_argument("-o", "--output-dir")
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--degree", type=int)
    p.add_argument("--partitions", type=int)
    p.add_argument("--parameter", choices=("index", "x"))
    p.add_argument("--anchor", choices=("center", "start"))
    p.add_argument("--pixel-pitch", help="pixel size in cloud units, or 'auto'")
    p.add_argument("--rounding", choices=("half_away", "half_even"))
    p.add_argument("--background", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--save-unwrapped", action="store_true", default=None)
    p.add_argument("--crop", action="store_true", default=None, help="crop to the largest valid rectangle")
    p.add_argument("--strict-rows", action="store_true", default=None, help="abort a file on a singular row fit")
    p.set_defaults(func=cmd_unwrap)


def cmd_unwrap(args):
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    for key in _FLAG_KEYS:
        value = getattr(args, key)
        if value is None:
            continue
        if key == "pixel_pitch":
            value = None if value == "auto" else float(value)
        overrides[key] = value
    if args.inputs:
        overrides["inputs"] = tuple(args.inputs)
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    config = replace(config, **overrides)
    result = run_pipeline(config)
    for f in result.failures:
        print(f"FAILED {f.source}: {f.error}", file=sys.stderr)
    ok = len(result.files) - len(result.failures)
    print(f"{ok}/{len(result.files)} files converted; manifest {result.manifest}")
    return result.status


# ------------------------------------------------------------------ synth


def _add_synth(sub):
    p = sub.add_parser("synth", help="write synthetic grid files")
    p.add_argument("-o", "--output", required=True, help="grid file, or directory with --corpus")
    p.add_argument("--corpus", action="store_true", help="write the standard synthetic corpus")
    p.add_argument("--kind", choices=KINDS, default="plane")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--coeff", type=float, default=0.0, help="slope, curvature or radius")
    p.add_argument("--amplitude", type=float, default=0.0)
    p.add_argument("--wavelength", type=float, default=8.0)
    p.add_argument("--orientation", choices=("along_x", "along_y"), default="along_x")
    p.add_argument("--axis", choices=("x", "y"), default="x")
    p.add_argument("--span", type=float, default=np.pi)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)


def cmd_synth(args):
    out = Path(args.output)
    if args.corpus:
        out.mkdir(parents=True, exist_ok=True)
        for name, spec in standard_corpus().items():
            save_grid(generate(spec), out / (name + GRID_SUFFIX))
            print(out / (name + GRID_SUFFIX))
        return EXIT_OK
    try:
        spec = SynthSpec(
            args.kind, args.width, args.height, args.spacing, args.coeff, args.amplitude,
            args.wavelength, args.orientation, args.axis, args.span, args.noise, args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    save_grid(generate(spec), out)
    print(out)
    return EXIT_OK


# ------------------------------------------------------------------ inspect


def _add_inspect(sub):
    p = sub.add_parser("inspect", help="validate grid files")
    p.add_argument("files", nargs="+")
    p.add_argument("--max-report", type=int, default=20)
    p.set_defaults(func=cmd_inspect)


def cmd_inspect(args):
    status = EXIT_OK
    for name in args.files:
        try:
            grid = load_grid(name, validate=False)
        except (GridFormatError, OSError, UnicodeDecodeError) as exc:
            print(f"{name}: ERROR {exc}")
            status = EXIT_PARTIAL
            continue
        violations = validate_grid(grid)
        n_valid = int(grid.mask.sum())
        print(f"{name}: {grid.width}x{grid.height} unit={grid.unit} valid={n_valid} violations={len(violations)}")
        for v in violations[: args.max_report]:
            print(f"  {v}")
        if violations:
            status = EXIT_PARTIAL
    return status


# ------------------------------------------------------------------ eval


def _subject_args(p, protocol=True):
    if protocol:
        p.add_argument("--protocol", choices=ev.PROTOCOLS, default="all_pairs_all_impressions")
    p.add_argument("--subjects", type=int, help="number of subjects, numbered from --first-subject")
    p.add_argument("--first-subject", type=int, default=1)
    p.add_argument("--impressions", type=int, default=6)


def _gallery_args(p):
    p.add_argument("--probe-impression", type=int, default=1)
    p.add_argument("--mate-impression", type=int, default=2)
    p.add_argument("--probe-session", type=int)
    p.add_argument("--gallery-session", type=int)


def _subject_list(args):
    if args.subjects is None:
        raise UsageError("--subjects is required")
    return range(args.first_subject, args.first_subject + args.subjects)


def _sessions(args):
    cross = getattr(args, "protocol", None) == "cross_session"
    probe = args.probe_session if args.probe_session is not None else (2 if cross else 1)
    gallery = args.gallery_session if args.gallery_session is not None else (1 if cross else probe)
    return probe, gallery


def _identification(args, probe_impression=None, mate_impression=None):
    probe_s, gallery_s = _sessions(args)
    return ev.gen_identification_gallery(
        _subject_list(args),
        args.impressions,
        probe_impression or args.probe_impression,
        mate_impression or args.mate_impression,
        probe_s,
        gallery_s,
    )


def _add_eval(sub):
    p = sub.add_parser("eval", help="protocol pair lists and verification/identification metrics")
    esub = p.add_subparsers(dest="eval_command", required=True, parser_class=_Parser)

    q = esub.add_parser("pairs", help="write the pair list an external matcher must score")
    _subject_args(q)
    _gallery_args(q)
    q.add_argument("--gallery", action="store_true", help="identification pairs instead of verification")
    q.add_argument("-o", "--output", required=True)
    q.set_defaults(func=cmd_pairs)

    for name, helptext in (("eer", "equal error rate"), ("roc", "ROC points"), ("det", "DET points")):
        q = esub.add_parser(name, help=helptext)
        q.add_argument("--scores", required=True)
        _subject_args(q)
        if name != "eer":
            q.add_argument("-o", "--output", required=True)
        q.set_defaults(func=cmd_metric, metric=name)

    q = esub.add_parser("cmc", help="cumulative match characteristic")
    q.add_argument("--scores", required=True)
    _subject_args(q)
    _gallery_args(q)
    q.add_argument("--combinations", action="store_true", help="average over every probe/mate impression pair")
    q.add_argument("-o", "--output", required=True)
    q.set_defaults(func=cmd_cmc)

    q = esub.add_parser("report", help="EER, ROC, DET, CMC and protocol counts")
    q.add_argument("--scores", required=True)
    _subject_args(q)
    _gallery_args(q)
    q.add_argument("--no-cmc", action="store_true")
    q.add_argument("-o", "--output-dir", required=True)
    q.set_defaults(func=cmd_report)


def cmd_pairs(args):
    if args.gallery:
        pairs = [_identification(args).pairs()]
    else:
        pairs = ev.gen_verification_pairs(args.protocol, _subject_list(args), args.impressions)
    n = ev.write_pairs(args.output, *pairs)
    if args.gallery:
        print(f"pairs={n}")
    else:
        print(f"genuine={len(pairs[0])}\nimposter={len(pairs[1])}\npairs={n}")
    return EXIT_OK


def _load(args, extra_pairs=()):
    pairs = None
    if args.subjects is not None:
        pairs = list(ev.gen_verification_pairs(args.protocol, _subject_list(args), args.impressions))
        pairs += list(extra_pairs)
    return ev.load_scores(args.scores, pairs, provenance=getattr(args, "protocol", ""))


def cmd_metric(args):
    scores = _load(args)
    if args.metric == "eer":
        print(f"eer={ev.compute_eer(scores)!r}")
        return EXIT_OK
    roc, det = ev.roc_det_points(scores)
    if args.metric == "roc":
        ev.write_points(args.output, ("far", "gar"), roc)
    else:
        ev.write_points(args.output, ("far", "frr"), det)
    print(args.output)
    return EXIT_OK


def cmd_cmc(args):
    scores = ev.load_scores(args.scores)
    if args.subjects is None:
        raise UsageError("--subjects is required")
    if args.combinations:
        combos = ev.impression_combinations(args.impressions)
        curves = [ev.cmc_from_scores(scores, _identification(args, p, q)) for p, q in combos]
        cmc = ev.average_cmc_over_combinations(curves)
    else:
        cmc = ev.cmc_from_scores(scores, _identification(args))
    ev.write_cmc(args.output, cmc)
    print(f"rank1={float(cmc[0])!r}")
    return EXIT_OK


def cmd_report(args):
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.subjects is None:
        raise UsageError("--subjects is required")
    ident = None if args.no_cmc else _identification(args)
    scores = _load(args, [ident.pairs()] if ident is not None else [])
    expected = ev.expected_counts(args.protocol, args.subjects, args.impressions)
    extra = {
        "protocol": args.protocol,
        "subjects": args.subjects,
        "impressions": args.impressions,
        "expected_genuine_count": expected[0],
        "expected_imposter_count": expected[1],
    }
    try:
        report = ev.build_report(scores, ident, **extra)
    except KeyError as exc:
        log.warning("CMC skipped: %s", exc)
        report = ev.build_report(scores, None, cmc="unavailable", **extra)
    written = ["report.txt", "roc.csv", "det.csv"]
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    ev.write_points(out / "roc.csv", ("far", "gar"), report.roc)
    ev.write_points(out / "det.csv", ("far", "frr"), report.det)
    if report.cmc is not None:
        ev.write_cmc(out / "cmc.csv", report.cmc)
        written.append("cmc.csv")
    with open(out / "manifest.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for name in sorted(written):
            fh.write(f"{name}\t{sha256_file(out / name)}\n")
    sys.stdout.write(report.to_text())
    partial = (report.genuine_count, report.imposter_count) != expected
    if partial:
        log.warning("score counts differ from the protocol: expected %s", expected)
    return EXIT_PARTIAL if partial else EXIT_OK


# ------------------------------------------------------------------ main


def build_parser():
    parser = _Parser(prog="fpunwrap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_unwrap(sub)
    _add_synth(sub)
    _add_eval(sub)
    _add_inspect(sub)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"fpunwrap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ev.ScoreFormatError, GridFormatError, KeyError, ValueError, OSError) as exc:
        print(f"fpunwrap: error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
