import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from invscat.domain import (BackgroundMedium, ContrastMap, ProbeRing, build_grid, disc_grid,
                            load_raster_target, make_circle_target, probe_count_for, read_raster)
from invscat.errors import ConfigurationError, IngestionError
from invscat.scenarios import glyph_path


def test_medium(medium):
    assert medium.wavelength == pytest.approx(299792458 / 300e6)
    assert medium.k == pytest.approx(2 * np.pi / medium.wavelength)
    with pytest.raises(ConfigurationError):
        BackgroundMedium(300e6, eps_r=1 - 0.1j)
    with pytest.raises(ConfigurationError):
        BackgroundMedium(-1.0)


def test_paper_grid(medium, lam):
    g = build_grid(2 * lam, 42, 42, medium)
    assert g.n_cells == 1764
    assert g.dx == pytest.approx(lam / 21)
    assert g.dy == pytest.approx(lam / 21)


def test_smallest_grid(medium, lam):
    g = build_grid(lam / 5, 2, 2, medium)
    pts = g.points
    assert np.allclose(np.sort(np.abs(pts), axis=0), lam / 20)
    assert len(pts) == 4


def test_two_by_two_at_quarter_lambda(lam):
    # a lambda-wide 2x2 lattice needs a long wavelength to satisfy lambda/10
    med = BackgroundMedium(300e6 / 10)
    g = build_grid(lam, 2, 2, med)
    assert np.allclose(np.abs(g.points), lam / 4)


def test_a_cell(medium, lam):
    g = build_grid(2 * lam, 20, 20, medium)
    assert g.a_cell == pytest.approx((lam / 10) / math.sqrt(math.pi))


def test_undersampled_grid_rejected(medium, lam):
    with pytest.raises(ConfigurationError, match="lambda/10"):
        build_grid(2 * lam, 10, 10, medium)
    with pytest.raises(ConfigurationError):
        build_grid(lam, 1, 5, medium)


def test_centers_point_symmetric(medium, lam):
    g = build_grid(2 * lam, 21, 24, medium)
    pts = g.points
    mirrored = {tuple(np.round(-p, 12)) for p in pts}
    assert mirrored == {tuple(np.round(p, 12)) for p in pts}


def test_image_roundtrip(small_grid, rng):
    v = rng.standard_normal(small_grid.n_cells)
    assert np.array_equal(small_grid.from_image(small_grid.to_image(v)), v)


def test_probe_count(medium, lam):
    assert probe_count_for(math.sqrt(2) * lam, medium) == 18
    assert probe_count_for(lam, medium) == 13
    assert probe_count_for(1e-9 * lam, medium) == 1


@given(st.floats(1e-3, 5.0), st.floats(1e-3, 5.0))
def test_probe_count_monotone(a, b):
    med = BackgroundMedium(300e6)
    lo, hi = sorted((a, b))
    assert probe_count_for(lo * med.wavelength, med) <= probe_count_for(hi * med.wavelength, med)


def test_probe_ring(lam, medium):
    ring = ProbeRing.uniform(3.75 * lam, 18)
    assert ring.n_tx == ring.n_rx == 18
    assert np.allclose(np.hypot(*ring.tx_positions.T), 3.75 * lam)
    g = build_grid(2 * lam, 42, 42, medium)
    ring.check_outside(g)
    with pytest.raises(ConfigurationError):
        ProbeRing.uniform(1.2 * lam, 18).check_outside(g)
    again = ProbeRing.from_json(ring.to_json())
    assert np.array_equal(again.rx_angles, ring.rx_angles)
    assert json.loads(ring.to_json())["radius"] == ring.radius


def test_circle_target_counts(medium, lam):
    g = build_grid(2 * lam, 42, 42, medium)
    t = make_circle_target(0.5 * lam, 1.0, g)
    pts = g.points
    brute = sum(1 for p in pts if p[0] ** 2 + p[1] ** 2 <= (0.5 * lam) ** 2)
    assert np.count_nonzero(t.values) == brute
    expected = np.pi * (0.5 * lam) ** 2 / g.cell_area
    assert abs(brute - expected) < 2 * np.pi * 0.5 * lam / g.dx
    assert not np.any(make_circle_target(lam, 0, g).values)
    with pytest.raises(ConfigurationError):
        make_circle_target(1.5 * lam, 1.0, g)


def test_area_coverage_preserves_area(medium, lam):
    g = build_grid(2 * lam, 42, 42, medium)
    t = make_circle_target(0.5 * lam, 1.0, g, coverage="area")
    assert t.values.real.sum() * g.cell_area == pytest.approx(np.pi * (0.5 * lam) ** 2, rel=2e-3)


def test_disc_grid_nested(medium, lam):
    small = disc_grid(0.5 * lam, lam / 12, medium)
    big = disc_grid(1.0 * lam, lam / 12, medium)
    inner = {tuple(np.round(p / lam, 9)) for p in big.points if np.hypot(*p) <= 0.5 * lam}
    assert inner == {tuple(np.round(p / lam, 9)) for p in small.points}


def test_glyph_raster(medium, lam):
    g = build_grid(2 * lam, 42, 42, medium)
    chi = load_raster_target(glyph_path(), 1.9, g)
    vals = set(np.unique(chi.values))
    assert vals == {0j, 1.9 + 0j}
    assert chi.scaled(2.0).values.max().real == pytest.approx(3.8)
    # both the inversion and the synthesis grids refine the raster exactly
    img = read_raster(glyph_path())
    assert 42 % img.shape[0] == 0 and 63 % img.shape[0] == 0


def test_raster_edge_cases(tmp_path, medium, lam):
    g = build_grid(lam, 10, 10, medium)
    zero = tmp_path / "z.csv"
    zero.write_text("\n".join(",".join(["0"] * 5) for _ in range(5)))
    assert not np.any(load_raster_target(zero, 1.9, g).values)
    ones = tmp_path / "o.csv"
    ones.write_text("\n".join(",".join(["1"] * 5) for _ in range(5)))
    assert np.allclose(load_raster_target(ones, 0.5, g).values, 0.5)
    bad = tmp_path / "b.pgm"
    bad.write_text("P2\n3 3\n255\n1 2 3\n")
    with pytest.raises(IngestionError):
        load_raster_target(bad, 1.0, g)
    with pytest.raises(IngestionError):
        load_raster_target(tmp_path / "missing.csv", 1.0, g)


def test_raster_orientation(tmp_path, medium, lam):
    g = build_grid(lam, 10, 10, medium)
    f = tmp_path / "top.csv"
    rows = [["1"] * 10] + [["0"] * 10 for _ in range(9)]
    f.write_text("\n".join(",".join(r) for r in rows))
    chi = load_raster_target(f, 1.0, g)
    lit = g.points[np.abs(chi.values) > 0]
    assert np.all(lit[:, 1] > 0)


def test_contrast_map_physical():
    ContrastMap([0.5, -0.9]).check_physical()
    with pytest.raises(ConfigurationError):
        ContrastMap([-1.5]).check_physical()
    with pytest.raises(ValueError):
        ContrastMap([1.0], kind="q")
