import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fpunwrap.cloud import (
    GridFormatError,
    PointCloudGrid,
    crop_largest_valid_rect,
    largest_valid_rect,
    load_grid,
    save_grid,
    validate_grid,
)


def lattice(W=4, H=3, z=None):
    x, y = np.meshgrid(np.arange(W, dtype=float), np.arange(H, dtype=float))
    return PointCloudGrid.from_xyz(x, y, np.zeros((H, W)) if z is None else z)


def write_text(path, body):
    path.write_text(body, encoding="ascii")
    return path


def test_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    g = lattice(5, 4, rng.normal(size=(4, 5)) * 1e-3)
    g.points[..., 0] += rng.uniform(0, 0.1, (4, 5))
    g.mask[1, 2] = False
    g.points[1, 2] = np.nan
    g.unit = "mm"
    save_grid(g, tmp_path / "a.p3d")
    back = load_grid(tmp_path / "a.p3d")
    assert back.equals(g)
    assert np.isnan(back.points[1, 2]).all()
    assert back.unit == "mm"


@settings(max_examples=25, deadline=None)
@given(z=arrays(np.float64, (3, 4), elements=st.floats(-1e6, 1e6, allow_subnormal=True)))
def test_round_trip_property(tmp_path_factory, z):
    path = tmp_path_factory.mktemp("rt") / "g.p3d"
    g = lattice(4, 3, z)
    save_grid(g, path)
    assert load_grid(path).equals(g)


def test_file_layout(tmp_path):
    g = lattice(2, 2)
    save_grid(g, tmp_path / "g.p3d")
    lines = (tmp_path / "g.p3d").read_text().splitlines()
    assert lines[:3] == ["P3DGRID 1", "2 2", "unit unit"]
    assert lines[3] == "0.0 0.0 0.0"
    assert len(lines) == 7


def test_non_finite_cells_are_masked(tmp_path):
    body = "P3DGRID 1\n2 2\nunit mm\n0 0 1\n1 0 inf\n0 1 2\n1 1 3\n"
    g = load_grid(write_text(tmp_path / "g.p3d", body))
    assert g.mask.tolist() == [[True, False], [True, True]]
    assert np.isnan(g.points[0, 1]).all()


@pytest.mark.parametrize(
    "body, line",
    [
        ("P3DGRID 2\n2 2\nunit mm\n", 1),
        ("P3DGRID 1\n2\nunit mm\n", 2),
        ("P3DGRID 1\n1 5\nunit mm\n", 2),
        ("P3DGRID 1\n2 2\nunits mm\n", 3),
        ("P3DGRID 1\n2 2\n", 3),
        ("P3DGRID 1\n2 2\nunit mm\n0 0 0\n1 0 0\n0 1 0\n", 7),
        ("P3DGRID 1\n2 2\nunit mm\n0 0 0\n1 0 zz\n0 1 0\n1 1 0\n", 5),
        ("P3DGRID 1\n2 2\nunit mm\n0 0 0\n1 0 0\n0 1\n1 1 0\n", 6),
        ("P3DGRID 1\n2 2\nunit mm\n0 0 0\n1 0 0\n0 1 0\n-0.5 1 0\n", 7),
        ("P3DGRID 1\n2 2\nunit mm\n0 0 0\n1 0 0\n0 0 0\n1 1 0\n", 6),
    ],
    ids=["magic", "dims", "too-small", "unit", "truncated", "count", "number", "fields", "x-order", "y-order"],
)
def test_format_errors_name_the_line(tmp_path, body, line):
    with pytest.raises(GridFormatError) as info:
        load_grid(write_text(tmp_path / "bad.p3d", body))
    assert info.value.line == line
    assert f":{line}" in str(info.value)


def test_non_ascii_is_a_format_error(tmp_path):
    path = tmp_path / "bad.p3d"
    path.write_bytes(b"P3DGRID 1\n2 2\nunit \xb5m\n")
    with pytest.raises(GridFormatError) as info:
        load_grid(path)
    assert info.value.line == 3


def test_validate_reports_every_violation():
    g = lattice(4, 3)
    g.points[0, 2, 0] = 0.5
    g.points[2, 1, 1] = 0.0
    g.points[1, 3] = [np.inf, 1, 0]
    rules = sorted((v.rule, v.row, v.col) for v in validate_grid(g))
    assert rules == [("finite", 1, 3), ("x-monotone", 0, 2), ("y-monotone", 2, 1)]


def test_validate_skips_masked_cells():
    g = lattice(4, 3)
    g.mask[1, 1] = False
    g.points[1, 1] = np.nan
    g.points[1, 2, 0] = 0.5  # compared against column 0, which is fine
    assert validate_grid(g) == []


def test_validate_structure():
    g = PointCloudGrid(np.zeros((3, 4, 3)), np.ones((4, 3), bool))
    assert [v.rule for v in validate_grid(g)] == ["structure"]


def brute_rect(mask):
    H, W = mask.shape
    best = (0, 0, 0, 0, 0)
    for r, c in itertools.product(range(H), range(W)):
        for h, w in itertools.product(range(1, H - r + 1), range(1, W - c + 1)):
            if mask[r : r + h, c : c + w].all() and (h * w, -r, -c) > best[:3]:
                best = (h * w, -r, -c, h, w)
    return -best[1], -best[2], best[3], best[4]


@settings(max_examples=80, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 7), st.integers(1, 7))))
def test_largest_rect_matches_brute_force(mask):
    if not mask.any():
        with pytest.raises(ValueError):
            largest_valid_rect(mask)
        return
    assert largest_valid_rect(mask) == brute_rect(mask)


def test_crop():
    g = lattice(5, 4)
    g.mask[0, :] = False
    g.mask[:, 4] = False
    c = crop_largest_valid_rect(g)
    assert (c.height, c.width) == (3, 4)
    assert c.mask.all()
    assert c.points[0, 0].tolist() == [0.0, 1.0, 0.0]
