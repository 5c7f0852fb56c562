"""Verification and identification protocols over external matcher scores.

Scores are similarities: higher means a better match. Pairs are stored as
integer arrays with columns ``subject_a, impression_a, session_a, subject_b,
impression_b, session_b``.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

__all__ = [
    "PROTOCOLS",
    "PAIR_COLUMNS",
    "ScoreFormatError",
    "ImpressionId",
    "ScoreSet",
    "IdentificationProtocol",
    "ProtocolReport",
    "gen_verification_pairs",
    "gen_identification_gallery",
    "impression_combinations",
    "write_pairs",
    "read_pairs",
    "write_scores",
    "load_scores",
    "error_counts",
    "compute_eer",
    "roc_det_points",
    "compute_cmc",
    "cmc_from_scores",
    "average_cmc_over_combinations",
    "build_report",
    "expected_counts",
]

PROTOCOLS = ("all_pairs_all_impressions", "first_impression_only", "cross_session")
PAIR_COLUMNS = ("subject_a", "impression_a", "session_a", "subject_b", "impression_b", "session_b")
SCORE_COLUMNS = PAIR_COLUMNS + ("score",)


class ScoreFormatError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True, order=True)
class ImpressionId:
    subject: int
    impression: int
    session: int = 1

    def __post_init__(self):
        if self.subject < 1 or self.impression < 1 or self.session < 1:
            raise ValueError(f"subject, impression and session must be positive: {self}")


# ---------------------------------------------------------------- protocols


def _subjects(subjects):
    subj = np.asarray(list(subjects), dtype=np.int64)
    if subj.size == 0:
        raise ValueError("empty subject list")
    if np.any(subj < 1):
        raise ValueError("subject ids must be positive")
    if np.unique(subj).size != subj.size:
        raise ValueError("duplicate subject ids")
    return subj


def _rows(sa, ia, ea, sb, ib, eb):
    cols = np.broadcast_arrays(*(np.asarray(c, dtype=np.int64) for c in (sa, ia, ea, sb, ib, eb)))
    return np.stack([c.ravel() for c in cols], axis=1)


def _within_subject(subj, m, session_a=1, session_b=1, ordered=False):
    """All impression pairs of the same subject."""
    if ordered:
        ia, ib = np.meshgrid(np.arange(1, m + 1), np.arange(1, m + 1), indexing="ij")
        ia, ib = ia.ravel(), ib.ravel()
    else:
        ia, ib = np.triu_indices(m, 1)
        ia, ib = ia + 1, ib + 1
    s = np.repeat(subj, ia.size)
    return _rows(s, np.tile(ia, subj.size), session_a, s, np.tile(ib, subj.size), session_b)


def _across_subjects(subj, m_a, m_b, session_a=1, session_b=1):
    """For every subject pair a < b (list order), all impressions of a against all of b."""
    a, b = np.triu_indices(subj.size, 1)
    ia, ib = np.meshgrid(np.arange(1, m_a + 1), np.arange(1, m_b + 1), indexing="ij")
    ia, ib = ia.ravel(), ib.ravel()
    n = ia.size
    return _rows(
        np.repeat(subj[a], n),
        np.tile(ia, a.size),
        session_a,
        np.repeat(subj[b], n),
        np.tile(ib, a.size),
        session_b,
    )


def gen_verification_pairs(protocol: str, subjects, impressions_per_subject: int):
    """Genuine and imposter pair arrays for a verification protocol.

    ``all_pairs_all_impressions``
        genuine: every unordered pair of a subject's impressions; imposter:
        every unordered pair of impressions from different subjects.
    ``first_impression_only``
        genuine as above; imposter: first impressions of every unordered
        subject pair.
    ``cross_session``
        genuine: each session-2 impression against each session-1
        impression of the same subject; imposter: for every unordered
        subject pair (a, b), a's session-2 impressions against b's session-1
        impressions.
    """
    subj = _subjects(subjects)
    m = int(impressions_per_subject)
    if m < 1:
        raise ValueError("impressions_per_subject must be >= 1")
    if protocol == "all_pairs_all_impressions":
        return _within_subject(subj, m), _across_subjects(subj, m, m)
    if protocol == "first_impression_only":
        return _within_subject(subj, m), _across_subjects(subj, 1, 1)
    if protocol == "cross_session":
        return (
            _within_subject(subj, m, session_a=2, session_b=1, ordered=True),
            _across_subjects(subj, m, m, session_a=2, session_b=1),
        )
    raise ValueError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")


@dataclass(eq=False)
class IdentificationProtocol:
    """One probe per subject searched against its own gallery.

    ``probes`` is (S, 3) of (subject, impression, session); ``gallery`` is
    (S, G, 3); ``mate_index[p]`` locates the probe's mate in ``gallery[p]``.
    """

    probes: np.ndarray
    gallery: np.ndarray
    mate_index: np.ndarray

    @property
    def gallery_size(self) -> int:
        return self.gallery.shape[1]

    def pairs(self) -> np.ndarray:
        """Every probe/gallery comparison as a pair array."""
        S, G, _ = self.gallery.shape
        p = np.repeat(self.probes, G, axis=0)
        return np.concatenate([p, self.gallery.reshape(S * G, 3)], axis=1)


def gen_identification_gallery(
    subjects,
    m: int,
    probe_impression: int = 1,
    mate_impression: int = 2,
    probe_session: int = 1,
    gallery_session: int | None = None,
) -> IdentificationProtocol:
    """Closed-set identification: gallery = own mate impression + all others' impressions.

    Gallery size is ``1 + (S - 1) * m``.
    """
    subj = _subjects(subjects)
    if not (1 <= probe_impression <= m and 1 <= mate_impression <= m):
        raise IndexError(f"impression indices must lie in [1, {m}]")
    gallery_session = probe_session if gallery_session is None else gallery_session
    if probe_impression == mate_impression and probe_session == gallery_session:
        raise ValueError("probe and mate must be different impressions")
    S = subj.size
    G = 1 + (S - 1) * m
    probes = _rows(subj, probe_impression, probe_session, 0, 0, 0)[:, :3]
    all_imps = _rows(np.repeat(subj, m), np.tile(np.arange(1, m + 1), S), gallery_session, 0, 0, 0)[:, :3]
    gallery = np.empty((S, G, 3), dtype=np.int64)
    mate_index = np.empty(S, dtype=np.int64)
    for p in range(S):
        own = slice(p * m, (p + 1) * m)
        mate = all_imps[own][mate_impression - 1]
        gallery[p] = np.concatenate([all_imps[: p * m], mate[None], all_imps[own.stop :]])
        mate_index[p] = p * m
    return IdentificationProtocol(probes, gallery, mate_index)


def impression_combinations(m: int):
    """Unordered (probe, mate) impression pairs, e.g. 15 for six impressions."""
    return list(itertools.combinations(range(1, m + 1), 2))


# ---------------------------------------------------------------- files


def _pair_keys(pairs: np.ndarray) -> np.ndarray:
    """Order-free 64-bit key per pair, for membership tests and lookups."""
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.size and (
        pairs[:, [0, 3]].max() >= 1 << 20 or pairs[:, [1, 4]].max() >= 1 << 8 or pairs[:, [2, 5]].max() >= 1 << 4
    ):
        raise ValueError("ids out of range for pair keys")
    a = ((pairs[:, 0] << 12) | (pairs[:, 1] << 4) | pairs[:, 2]).astype(np.uint64)
    b = ((pairs[:, 3] << 12) | (pairs[:, 4] << 4) | pairs[:, 5]).astype(np.uint64)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    return (lo << np.uint64(32)) | hi


def _format_rows(pairs, scores=None):
    buf = io.StringIO()
    if scores is None:
        for row in pairs.tolist():
            buf.write("%d,%d,%d,%d,%d,%d\n" % tuple(row))
    else:
        for row, s in zip(pairs.tolist(), np.asarray(scores, dtype=float).tolist()):
            buf.write("%d,%d,%d,%d,%d,%d," % tuple(row) + repr(s) + "\n")
    return buf.getvalue()


def write_pairs(path, *pair_arrays) -> int:
    """Write one or more pair arrays as a pairlist CSV; returns the row count."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(PAIR_COLUMNS) + "\n")
        for pairs in pair_arrays:
            fh.write(_format_rows(np.asarray(pairs)))
            n += len(pairs)
    return n


def _read_table(path, columns, dtypes):
    import pandas as pd

    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ScoreFormatError(str(exc)) from None
    if tuple(df.columns) != columns:
        raise ScoreFormatError(f"expected header {','.join(columns)}", line=1)
    out = []
    for name, kind in zip(columns, dtypes):
        col = df[name].str.strip()
        if name.startswith("session"):
            col = col.where(col != "", "1")
        vals = pd.to_numeric(col, errors="coerce")
        bad = vals.isna().to_numpy()
        if kind is int:
            bad |= ~np.isclose(vals.fillna(0).to_numpy() % 1, 0)
        if kind is float:
            bad |= ~np.isfinite(vals.fillna(0).to_numpy())
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise ScoreFormatError(f"bad {name} value {df[name].iloc[row]!r}", line=row + 2)
        if kind is float:
            # pandas' fast parser can be off by an ulp; float() is exact
            out.append(np.array([float(v) for v in col.tolist()], dtype=float))
        else:
            out.append(vals.to_numpy(dtype=np.int64))
    return out


def read_pairs(path) -> np.ndarray:
    cols = _read_table(path, PAIR_COLUMNS, [int] * 6)
    return np.stack(cols, axis=1) if len(cols[0]) else np.empty((0, 6), dtype=np.int64)


@dataclass(eq=False)
class ScoreSet:
    genuine: np.ndarray
    imposter: np.ndarray
    genuine_pairs: np.ndarray | None = None
    imposter_pairs: np.ndarray | None = None
    provenance: str = ""

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=float)
        self.imposter = np.asarray(self.imposter, dtype=float)
        for name in ("genuine", "imposter"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} scores must be finite")

    def lookup(self, pairs: np.ndarray) -> np.ndarray:
        """Scores of the given pairs, irrespective of pair orientation."""
        if self.genuine_pairs is None or self.imposter_pairs is None:
            raise ValueError("score set carries no pair labels")
        keys = _pair_keys(np.concatenate([self.genuine_pairs, self.imposter_pairs]))
        vals = np.concatenate([self.genuine, self.imposter])
        order = np.argsort(keys, kind="stable")
        keys, vals = keys[order], vals[order]
        want = _pair_keys(pairs)
        pos = np.searchsorted(keys, want)
        pos_c = np.minimum(pos, max(keys.size - 1, 0))
        found = (pos < keys.size) & (keys[pos_c] == want) if keys.size else np.zeros(want.size, bool)
        if not found.all():
            missing = np.asarray(pairs)[np.flatnonzero(~found)[0]].tolist()
            raise KeyError(f"no score for pair {missing} ({int((~found).sum())} missing)")
        return vals[pos_c]


def write_scores(path, scores: ScoreSet) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(SCORE_COLUMNS) + "\n")
        fh.write(_format_rows(scores.genuine_pairs, scores.genuine))
        fh.write(_format_rows(scores.imposter_pairs, scores.imposter))


def load_scores(path, pairs=None, provenance: str = "") -> ScoreSet:
    """Read a score CSV and split it into genuine and imposter scores.

    Rows are genuine when both sides name the same subject. If ``pairs``
    (an iterable of pair arrays, e.g. the output of
    :func:`gen_verification_pairs`) is given, every row must be one of them.
    """
    cols = _read_table(path, SCORE_COLUMNS, [int] * 6 + [float])
    rows = np.stack(cols[:6], axis=1) if len(cols[0]) else np.empty((0, 6), dtype=np.int64)
    vals = cols[6]
    if rows.size and rows.min() < 1:
        bad = int(np.flatnonzero((rows < 1).any(axis=1))[0])
        raise ScoreFormatError("ids must be positive", line=bad + 2)
    if rows.size:
        keys = _pair_keys(rows)
        order = np.argsort(keys, kind="stable")
        dup = np.flatnonzero(keys[order][1:] == keys[order][:-1])
        if dup.size:
            bad = int(np.min(order[dup + 1]))
            raise ScoreFormatError(f"pair {rows[bad].tolist()} is scored more than once", line=bad + 2)
    if pairs is not None:
        allowed = np.sort(_pair_keys(np.concatenate([np.asarray(p) for p in pairs])))
        keys = _pair_keys(rows)
        pos = np.minimum(np.searchsorted(allowed, keys), allowed.size - 1)
        outside = allowed[pos] != keys
        if outside.any():
            bad = int(np.flatnonzero(outside)[0])
            raise ScoreFormatError(f"pair {rows[bad].tolist()} is not part of the protocol", line=bad + 2)
    genuine = rows[:, 0] == rows[:, 3]
    return ScoreSet(vals[genuine], vals[~genuine], rows[genuine], rows[~genuine], provenance)


# ---------------------------------------------------------------- metrics


def _classes(scores, imposter=None):
    if imposter is None:
        genuine, imposter = scores.genuine, scores.imposter
    else:
        genuine = scores
    genuine = np.asarray(genuine, dtype=float)
    imposter = np.asarray(imposter, dtype=float)
    if genuine.size == 0 or imposter.size == 0:
        raise ValueError("both genuine and imposter scores are required")
    return genuine, imposter


def error_counts(scores, imposter=None):
    """Thresholds with false-accept and false-reject counts.

    One entry per distinct score plus a final ``+inf`` threshold. At
    threshold ``t`` an imposter is accepted when its score is ``>= t`` and a
    genuine score is rejected when it is ``< t``. Returns ``(thresholds,
    false_accepts, false_rejects, n_genuine, n_imposter)``.
    """
    genuine, imposter = _classes(scores, imposter)
    g, i = np.sort(genuine), np.sort(imposter)
    thr = np.append(np.unique(np.concatenate([g, i])), np.inf)
    fa = i.size - np.searchsorted(i, thr, side="left")
    fr = np.searchsorted(g, thr, side="left")
    return thr, fa, fr, g.size, i.size


def compute_eer(scores, imposter=None) -> float:
    """Equal error rate, interpolated linearly between bracketing thresholds.

    Accepts a :class:`ScoreSet` or two arrays ``(genuine, imposter)``.
    """
    _, fa, fr, ng, ni = error_counts(scores, imposter)
    diff = fa.astype(np.int64) * ng - fr.astype(np.int64) * ni  # sign of FAR - FRR, exact
    k = int(np.argmax(diff <= 0))  # the +inf threshold guarantees a hit
    if diff[k] == 0:
        return float(Fraction(int(fa[k]), ni))
    far0, frr0 = Fraction(int(fa[k - 1]), ni), Fraction(int(fr[k - 1]), ng)
    far1, frr1 = Fraction(int(fa[k]), ni), Fraction(int(fr[k]), ng)
    return float((far0 * frr1 - frr0 * far1) / ((far0 - frr0) - (far1 - frr1)))


def roc_det_points(scores, imposter=None):
    """``(roc, det)`` arrays of ``(FAR, GAR)`` and ``(FAR, FRR)``, sorted by FAR."""
    _, fa, fr, ng, ni = error_counts(scores, imposter)
    far = fa[::-1] / ni
    frr = fr[::-1] / ng
    return np.column_stack([far, 1.0 - frr]), np.column_stack([far, frr])


def compute_cmc(score_table, mates) -> np.ndarray:
    """Cumulative match curve; ``cmc[k-1]`` is the fraction of probes ranked <= k.

    ``score_table`` is (probes, gallery). ``mates`` is either a boolean table
    of the same shape with exactly one True per row, or one gallery index per
    probe. Non-mates scoring equal to the mate are ranked ahead of it.
    """
    table = np.asarray(score_table, dtype=float)
    if table.ndim != 2 or table.size == 0:
        raise ValueError("score table must be a non-empty 2-D array")
    mates = np.asarray(mates)
    if mates.dtype == bool:
        if mates.shape != table.shape:
            raise ValueError("mate table must match the score table shape")
        per_probe = mates.sum(axis=1)
        if np.any(per_probe != 1):
            p = int(np.flatnonzero(per_probe != 1)[0])
            raise ValueError(f"probe {p} has {int(per_probe[p])} mates, expected exactly one")
        mate_idx = mates.argmax(axis=1)
    else:
        mate_idx = mates.astype(np.int64)
        if mate_idx.shape != (table.shape[0],):
            raise ValueError("need one mate index per probe")
        if np.any((mate_idx < 0) | (mate_idx >= table.shape[1])):
            raise ValueError("mate index outside the gallery")
    P, G = table.shape
    mate_scores = table[np.arange(P), mate_idx]
    ahead = (table >= mate_scores[:, None]).sum(axis=1) - 1
    ranks = ahead + 1
    hist = np.bincount(ranks, minlength=G + 1)[1:]
    return np.cumsum(hist) / P


def cmc_from_scores(scores: ScoreSet, protocol: IdentificationProtocol) -> np.ndarray:
    """CMC of an identification protocol using scores looked up in ``scores``."""
    S, G = protocol.gallery.shape[:2]
    table = scores.lookup(protocol.pairs()).reshape(S, G)
    return compute_cmc(table, protocol.mate_index)


def average_cmc_over_combinations(cmcs) -> np.ndarray:
    cmcs = [np.asarray(c, dtype=float) for c in cmcs]
    if not cmcs:
        raise ValueError("no CMC curves to average")
    if len({c.shape for c in cmcs}) != 1:
        raise ValueError("CMC curves differ in length")
    return np.mean(np.stack(cmcs), axis=0)


# ---------------------------------------------------------------- reports


@dataclass(eq=False)
class ProtocolReport:
    eer: float
    roc: np.ndarray
    det: np.ndarray
    cmc: np.ndarray | None
    genuine_count: int
    imposter_count: int
    gallery_size: int | None = None
    extra: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"eer={float(self.eer)!r}",
            f"eer_percent={100 * self.eer:.4f}",
            f"genuine_count={self.genuine_count}",
            f"imposter_count={self.imposter_count}",
        ]
        if self.gallery_size is not None:
            lines.append(f"gallery_size={self.gallery_size}")
        if self.cmc is not None:
            lines.append(f"rank1={float(self.cmc[0])!r}")
            if self.cmc.size > 1:
                lines.append(f"rank2={float(self.cmc[1])!r}")
        for key in sorted(self.extra):
            lines.append(f"{key}={self.extra[key]}")
        return "\n".join(lines) + "\n"


def write_points(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in np.asarray(rows).tolist():
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def write_cmc(path, cmc) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("rank,accuracy\n")
        for k, v in enumerate(np.asarray(cmc, dtype=float).tolist(), 1):
            fh.write(f"{k},{v!r}\n")


def build_report(scores: ScoreSet, identification: IdentificationProtocol | None = None, **extra) -> ProtocolReport:
    roc, det = roc_det_points(scores)
    cmc = cmc_from_scores(scores, identification) if identification is not None else None
    return ProtocolReport(
        eer=compute_eer(scores),
        roc=roc,
        det=det,
        cmc=cmc,
        genuine_count=int(scores.genuine.size),
        imposter_count=int(scores.imposter.size),
        gallery_size=identification.gallery_size if identification is not None else None,
        extra=extra,
    )


def expected_counts(protocol: str, S: int, m: int) -> tuple[int, int]:
    """Closed-form (genuine, imposter) pair counts of a protocol."""
    within = S * math.comb(m, 2)
    if protocol == "all_pairs_all_impressions":
        return within, math.comb(S * m, 2) - within
    if protocol == "first_impression_only":
        return within, math.comb(S, 2)
    if protocol == "cross_session":
        return S * m * m, math.comb(S, 2) * m * m
    raise ValueError(f"unknown protocol {protocol!r}")
