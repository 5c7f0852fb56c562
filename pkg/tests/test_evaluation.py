import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpunwrap import evaluation as ev


def sweep_eer(genuine, imposter, thresholds):
    """Brute-force EER: FAR/FRR on a dense threshold grid, linear at the sign change."""
    g, i = np.sort(genuine), np.sort(imposter)
    far = 1.0 - np.searchsorted(i, thresholds, side="left") / i.size
    frr = np.searchsorted(g, thresholds, side="left") / g.size
    d = far - frr
    k = int(np.argmax(d <= 0))
    if d[k] == 0:
        return far[k]
    a0, r0, a1, r1 = far[k - 1], frr[k - 1], far[k], frr[k]
    return (a0 * r1 - r0 * a1) / ((a0 - r0) - (a1 - r1))


# ---------------------------------------------------------------- protocols


def brute_pairs(protocol, S, m):
    ids = [(s, i) for s in range(1, S + 1) for i in range(1, m + 1)]
    gen, imp = set(), set()
    if protocol == "cross_session":
        for (sa, ia), (sb, ib) in itertools.product(ids, ids):
            if sa == sb:
                gen.add((sa, ia, 2, sb, ib, 1))
            elif sa < sb:
                imp.add((sa, ia, 2, sb, ib, 1))
        return gen, imp
    for (sa, ia), (sb, ib) in itertools.combinations(ids, 2):
        if sa == sb:
            gen.add((sa, ia, 1, sb, ib, 1))
        elif protocol == "all_pairs_all_impressions" or ia == ib == 1:
            imp.add((sa, ia, 1, sb, ib, 1))
    return gen, imp


@pytest.mark.parametrize("protocol", ev.PROTOCOLS)
@pytest.mark.parametrize("S, m", [(2, 1), (3, 2), (5, 4)])
def test_pairs_match_brute_force(protocol, S, m):
    gen, imp = ev.gen_verification_pairs(protocol, range(1, S + 1), m)
    bg, bi = brute_pairs(protocol, S, m)
    assert {tuple(r) for r in gen.tolist()} == bg and len(gen) == len(bg)
    assert {tuple(r) for r in imp.tolist()} == bi and len(imp) == len(bi)
    assert (len(gen), len(imp)) == ev.expected_counts(protocol, S, m)


def test_pair_keys_are_order_free_and_unique():
    gen, imp = ev.gen_verification_pairs("all_pairs_all_impressions", range(1, 8), 3)
    pairs = np.concatenate([gen, imp])
    keys = ev._pair_keys(pairs)
    assert np.unique(keys).size == keys.size
    np.testing.assert_array_equal(keys, ev._pair_keys(pairs[:, [3, 4, 5, 0, 1, 2]]))


def test_protocol_argument_errors():
    with pytest.raises(ValueError):
        ev.gen_verification_pairs("nope", [1, 2], 2)
    with pytest.raises(ValueError):
        ev.gen_verification_pairs("first_impression_only", [1, 1], 2)
    with pytest.raises(ValueError):
        ev.gen_verification_pairs("first_impression_only", [1, 2], 0)


def test_identification_gallery_layout():
    prot = ev.gen_identification_gallery([1, 2, 3], 2)
    assert prot.gallery_size == 1 + 2 * 2
    for p in range(3):
        g = prot.gallery[p]
        mate = g[prot.mate_index[p]].tolist()
        assert mate == [p + 1, 2, 1]
        assert sum(1 for row in g.tolist() if row[0] == p + 1) == 1
        assert prot.probes[p].tolist() == [p + 1, 1, 1]
    assert prot.pairs().shape == (3 * 5, 6)
    with pytest.raises(ValueError):
        ev.gen_identification_gallery([1, 2], 2, 1, 1)
    with pytest.raises(IndexError):
        ev.gen_identification_gallery([1, 2], 2, 1, 3)


def test_impression_combinations():
    assert len(ev.impression_combinations(6)) == 15


# ---------------------------------------------------------------- EER


def test_eer_hand_example():
    # FAR/FRR cross between thresholds 5 and 6
    assert ev.compute_eer([4, 6, 8, 9], [1, 3, 5, 7]) == 0.25


def test_eer_trivial_cases():
    assert ev.compute_eer([5, 6, 7], [1, 2, 3]) == 0.0
    assert ev.compute_eer([1, 2, 3], [1, 2, 3]) == 0.5
    assert ev.compute_eer([1, 1], [1, 1]) == 0.5
    assert ev.compute_eer([1, 2], [5, 6]) == 1.0


def test_det_points_hand_enumeration():
    roc, det = ev.roc_det_points([4, 6, 8, 9], [1, 3, 5, 7])
    far = [0, 0, 0, 0.25, 0.25, 0.5, 0.5, 0.75, 1.0]
    frr = [1.0, 0.75, 0.5, 0.5, 0.25, 0.25, 0.0, 0.0, 0.0]
    np.testing.assert_array_equal(det[:, 0], far)
    np.testing.assert_array_equal(det[:, 1], frr)
    np.testing.assert_array_equal(roc[:, 1], 1 - np.array(frr))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), shift=st.integers(-20, 40))
def test_eer_matches_sweep(seed, shift):
    rng = np.random.default_rng(seed)
    imp = rng.integers(0, 60, rng.integers(1, 80))
    gen = rng.integers(0, 60, rng.integers(1, 80)) + shift
    thr = np.arange(-30.5, 110.5, 0.5)
    assert ev.compute_eer(gen, imp) == pytest.approx(sweep_eer(gen, imp, thr), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    gen=st.lists(st.integers(0, 30), min_size=1, max_size=30),
    imp=st.lists(st.integers(0, 30), min_size=1, max_size=30),
)
def test_eer_bounds_and_symmetry(gen, imp):
    e = ev.compute_eer(gen, imp)
    assert 0.0 <= e <= 1.0
    # swapping classes and negating scores mirrors the problem
    assert ev.compute_eer([-v for v in imp], [-v for v in gen]) == pytest.approx(e, abs=1e-12)


def test_eer_requires_both_classes():
    with pytest.raises(ValueError):
        ev.compute_eer([], [1.0])


# ---------------------------------------------------------------- CMC


def test_cmc_toy_gallery():
    table = np.array(
        [
            [0.9, 0.1, 0.2],  # mate 0, rank 1
            [0.5, 0.4, 0.6],  # mate 1, rank 3
            [0.3, 0.7, 0.7],  # mate 2, tie with column 1 -> rank 2
        ]
    )
    cmc = ev.compute_cmc(table, np.array([0, 1, 2]))
    assert [Fraction(v).limit_denominator(10) for v in cmc] == [Fraction(1, 3), Fraction(2, 3), 1]
    mates = np.eye(3, dtype=bool)
    np.testing.assert_array_equal(ev.compute_cmc(table, np.array([0, 1, 2])), ev.compute_cmc(table, mates))


def test_cmc_159_of_160():
    table = np.zeros((160, 5))
    table[:, 0] = 1.0
    table[7, 3] = 2.0  # one probe's mate is beaten once
    cmc = ev.compute_cmc(table, np.zeros(160, dtype=int))
    assert cmc[0] == 159 / 160 == 0.99375
    assert cmc[1] == 1.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_cmc_monotone_and_ends_at_one(seed):
    rng = np.random.default_rng(seed)
    P, G = rng.integers(1, 20), rng.integers(1, 30)
    table = rng.integers(0, 5, (P, G)).astype(float)
    cmc = ev.compute_cmc(table, rng.integers(0, G, P))
    assert np.all(np.diff(cmc) >= 0) and cmc[-1] == 1.0


def test_cmc_rejects_bad_mates():
    with pytest.raises(ValueError):
        ev.compute_cmc(np.zeros((2, 2)), np.ones((2, 2), bool))
    with pytest.raises(ValueError):
        ev.compute_cmc(np.zeros((2, 2)), np.array([0, 2]))


def test_average_cmc():
    np.testing.assert_array_equal(ev.average_cmc_over_combinations([[0.5, 1.0], [1.0, 1.0]]), [0.75, 1.0])
    with pytest.raises(ValueError):
        ev.average_cmc_over_combinations([[1.0], [0.5, 1.0]])


# ---------------------------------------------------------------- files


def synthetic_scores(protocol, S, m, seed=0):
    gen, imp = ev.gen_verification_pairs(protocol, range(1, S + 1), m)
    rng = np.random.default_rng(seed)
    return ev.ScoreSet(rng.normal(3, 1, len(gen)), rng.normal(0, 1, len(imp)), gen, imp)


def test_score_round_trip(tmp_path):
    s = synthetic_scores("all_pairs_all_impressions", 4, 3)
    ev.write_scores(tmp_path / "s.csv", s)
    back = ev.load_scores(tmp_path / "s.csv", ev.gen_verification_pairs("all_pairs_all_impressions", range(1, 5), 3))
    np.testing.assert_array_equal(back.genuine, s.genuine)
    np.testing.assert_array_equal(back.imposter, s.imposter)
    assert ev.compute_eer(back) == ev.compute_eer(s)


def test_pair_file_round_trip(tmp_path):
    gen, imp = ev.gen_verification_pairs("cross_session", [1, 2, 3], 2)
    assert ev.write_pairs(tmp_path / "p.csv", gen, imp) == len(gen) + len(imp)
    np.testing.assert_array_equal(ev.read_pairs(tmp_path / "p.csv"), np.concatenate([gen, imp]))


def test_lookup_ignores_orientation():
    s = synthetic_scores("all_pairs_all_impressions", 3, 2)
    flipped = s.imposter_pairs[:, [3, 4, 5, 0, 1, 2]]
    np.testing.assert_array_equal(s.lookup(flipped), s.imposter)
    with pytest.raises(KeyError):
        s.lookup(np.array([[1, 1, 1, 9, 1, 1]]))


HEADER = ",".join(ev.SCORE_COLUMNS) + "\n"


@pytest.mark.parametrize(
    "body, line",
    [
        ("a,b\n1,2\n", 1),
        (HEADER + "1,1,1,2,1,1,0.5\n1,x,1,2,1,1,0.5\n", 3),
        (HEADER + "1,1,1,2,1,1,nan\n", 2),
        (HEADER + "1,1.5,1,2,1,1,0.5\n", 2),
        (HEADER + "1,1,1,2,1,1,0.5\n0,1,1,2,1,1,0.5\n", 3),
        (HEADER + "1,1,1,2,1,1,0.5\n1,2,1,2,1,1,0.5\n2,1,1,1,1,1,0.7\n", 4),
    ],
    ids=["header", "text-id", "nan-score", "fractional-id", "zero-id", "duplicate"],
)
def test_score_format_errors(tmp_path, body, line):
    (tmp_path / "s.csv").write_text(body)
    with pytest.raises(ev.ScoreFormatError) as info:
        ev.load_scores(tmp_path / "s.csv")
    assert info.value.line == line


def test_empty_session_defaults_to_one(tmp_path):
    (tmp_path / "s.csv").write_text(HEADER + "1,1,,1,2,,0.9\n1,1,,2,1,,0.1\n")
    s = ev.load_scores(tmp_path / "s.csv")
    assert s.genuine_pairs.tolist() == [[1, 1, 1, 1, 2, 1]]


def test_scores_outside_protocol_rejected(tmp_path):
    (tmp_path / "s.csv").write_text(HEADER + "1,1,1,1,2,1,0.9\n1,1,1,2,2,1,0.1\n")
    pairs = ev.gen_verification_pairs("first_impression_only", [1, 2], 2)
    with pytest.raises(ev.ScoreFormatError) as info:
        ev.load_scores(tmp_path / "s.csv", pairs)
    assert info.value.line == 3


def test_report_text():
    s = synthetic_scores("all_pairs_all_impressions", 5, 3)
    ident = ev.gen_identification_gallery(range(1, 6), 3)
    rep = ev.build_report(s, ident, protocol="x")
    text = rep.to_text()
    assert "gallery_size=13" in text and "protocol=x" in text
    assert rep.cmc.size == 13
    assert text.startswith(f"eer={rep.eer!r}\n")
    assert f"rank1={float(rep.cmc[0])!r}\n" in text
