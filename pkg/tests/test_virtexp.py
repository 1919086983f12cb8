import numpy as np
import pytest

from invscat.domain import ContrastMap, ProbeRing, build_grid, make_circle_target
from invscat.forward import MultistaticData, incident_fields, radiate, solve_state, synthesize
from invscat.inversion import AngularPenalty
from invscat.models import ModelKind, build_modified_model
from invscat.operators import assemble_external
from invscat.virtexp import (design_ve, design_ves, lsm_indicator, select_pivots, superpose,
                             tikhonov_solve, ve_from_csv, ve_to_csv)


@pytest.fixture(scope="module")
def disc(medium, lam):
    g = build_grid(2 * lam, 30, 30, medium)
    ring = ProbeRing.uniform(3.75 * lam, 18)
    chi = make_circle_target(0.4 * lam, 0.5, g)
    model = build_modified_model(ModelKind.h0(), g)
    data, sol = synthesize(model, chi, ring)
    return g, ring, chi, model, data


def _reg(data, factor=1e-4):
    # noise-free data tolerate far lighter regularization than the default
    return factor * np.linalg.norm(data.values, 2) ** 2


def test_indicator_peaks_in_disc(disc, lam):
    g, ring, chi, model, data = disc
    ind = lsm_indicator(data, g, _reg(data))
    pts = g.points
    r = np.hypot(*pts.T)
    assert r[np.argmax(ind)] <= 0.4 * lam
    centre = ind[np.argmin(r)]
    ring_out = np.abs(r - 0.9 * lam) < g.dx
    assert centre >= 5 * ind[ring_out].max()


def test_indicator_scale_invariance(disc):
    g, ring, chi, model, data = disc
    a = lsm_indicator(data, g, _reg(data))
    scaled = MultistaticData(3.0 * data.values, ring, data.frequency)
    b = lsm_indicator(scaled, g, _reg(scaled))
    # default regularization scales with sigma_max^2, so alpha -> alpha / c
    assert np.allclose(b, 3.0 * a, rtol=1e-10)
    assert np.argmax(a) == np.argmax(b)


def test_indicator_errors(disc):
    g, ring, *_ = disc
    with pytest.raises(ValueError):
        lsm_indicator(MultistaticData(np.zeros((18, 18)), ring, 3e8), g)


def test_one_hot_ve_is_original(disc):
    g, ring, chi, model, data = disc
    inc = incident_fields(g, ring)
    for t in (0, 7):
        ve = design_ve(data, (0.0, 0.0), g, alpha=np.eye(ring.n_tx)[t])
        assert np.array_equal(ve.incident, inc[:, t])
        assert np.array_equal(ve.scattered, data.values[:, t])


def test_ve_consistency(disc, rng):
    g, ring, chi, model, data = disc
    ve = design_ve(data, (0.1, -0.05), g)
    assert np.array_equal(ve.scattered, superpose(data.values, ve.alpha))
    assert np.array_equal(ve.incident, superpose(incident_fields(g, ring), ve.alpha))
    assert not np.any(superpose(data.values, np.zeros(ring.n_tx)))
    W = rng.standard_normal((g.n_cells, ring.n_tx))
    Ae = assemble_external(g, ring)
    assert np.allclose(superpose(radiate(Ae, W), ve.alpha), radiate(Ae, superpose(W, ve.alpha)), rtol=1e-12)


def test_ve_state_equation_superposition(disc):
    g, ring, chi, model, data = disc
    ve = design_ve(data, (0.0, 0.0), g)
    sol = solve_state(model, chi, incident_fields(g, ring))
    Wv = superpose(sol.W, ve.alpha)
    r = model.state_residual(chi, Wv, ve.incident)
    assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(Wv)


def test_pivot_outside_rejected(disc, lam):
    g, ring, chi, model, data = disc
    with pytest.raises(ValueError):
        design_ve(data, (1.5 * lam, 0.0), g)


def test_tikhonov_residual_monotone(disc):
    g, ring, chi, model, data = disc
    from invscat.virtexp import point_source_fields
    F = data.values
    gz = point_source_fields(g, ring, [0.0, 0.0])
    res = []
    for reg in np.logspace(0, -8, 9) * np.linalg.norm(F, 2) ** 2:
        a = tikhonov_solve(F, gz, reg)
        res.append(np.linalg.norm(F @ a - gz) / np.linalg.norm(gz))
    assert np.all(np.diff(res) <= 1e-12)


def test_focused_sources_nearly_circular(disc, lam):
    g, ring, chi, model, data = disc
    ve = design_ve(data, (0.0, 0.0), g)
    W = solve_state(model, chi, ve.incident).W[:, 0]
    pen = AngularPenalty(g, (0.0, 0.0), 0.25 * lam)
    # total energy on the same rings, with the same weights
    samples = np.vstack([pen._bilinear(np.array([[r * np.cos(p), r * np.sin(p)] for p in
                                                 2 * np.pi * np.arange(16) / 16])) for r in pen.ring_radii])
    w = np.repeat(pen.ring_weights, 16)
    total = float(np.sum(w * np.abs(samples @ W) ** 2))
    assert pen.value(W) <= 0.2 * total


def test_information_conservation(disc):
    g, ring, chi, model, data = disc
    pivots = [(x, y) for x in (-0.2, 0.0, 0.2) for y in (-0.2, 0.2)]
    ves = design_ves(data, np.array(pivots), g)
    stacked = np.column_stack([v.scattered for v in ves])
    assert np.linalg.matrix_rank(stacked) <= np.linalg.matrix_rank(data.values)
    # every VE data vector lies in the column span of F
    Q, _ = np.linalg.qr(data.values)
    assert np.linalg.norm(stacked - Q @ (Q.conj().T @ stacked)) <= 1e-8 * np.linalg.norm(stacked)


def test_design_deterministic(disc):
    g, ring, chi, model, data = disc
    a, b = design_ve(data, (0.05, 0.1), g), design_ve(data, (0.05, 0.1), g)
    assert np.array_equal(a.alpha, b.alpha)


def test_select_pivots(medium, lam, small_grid):
    ind = np.arange(small_grid.n_cells, dtype=float)
    ps = select_pivots(ind, small_grid, 1, 0.0)
    assert ps.cells[0] == small_grid.n_cells - 1
    flat = np.ones(small_grid.n_cells)
    ps = select_pivots(flat, small_grid, 3, 0.0)
    assert list(ps.cells) == [0, 1, 2]
    ps = select_pivots(flat, small_grid, 500, 0.3 * lam)
    assert len(ps.cells) < 500


def test_select_pivots_two_discs(medium, lam):
    g = build_grid(2 * lam, 30, 30, medium)
    ring = ProbeRing.uniform(3.75 * lam, 18)
    c = (make_circle_target(0.2 * lam, 0.5, g, center=(-0.5 * lam, 0)).values
         + make_circle_target(0.2 * lam, 0.5, g, center=(0.5 * lam, 0)).values)
    data, _ = synthesize(build_modified_model(ModelKind.h0(), g), ContrastMap(c), ring)
    ps = select_pivots(lsm_indicator(data, g, _reg(data)), g, 2, 0.5 * lam)
    assert sorted(np.sign(ps.points[:, 0])) == [-1, 1]


def test_ve_csv_roundtrip(tmp_path, disc):
    g, ring, chi, model, data = disc
    ves = design_ves(data, np.array([[0.0, 0.0], [0.1, 0.2]]), g)
    p = tmp_path / "ve.csv"
    ve_to_csv(ves, p)
    piv, alphas = ve_from_csv(p)
    assert np.array_equal(piv, np.array([[0.0, 0.0], [0.1, 0.2]]))
    assert np.array_equal(alphas, np.array([v.alpha for v in ves]))
