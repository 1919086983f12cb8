"""Virtual experiments: superposing the physical experiments with designed weights.

Coefficients come from the regularized focusing problem F alpha = g_z, where
F is the N_R x N_T data matrix and g_z the field of a point source at z on
the receivers.  The same solve gives the sampling indicator 1/||alpha_z||.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .domain import Grid
from .forward import MultistaticData, incident_fields

log = logging.getLogger(__name__)

DEFAULT_REG_FACTOR = 1e-2


def _data_matrix(data):
    return np.asarray(getattr(data, "values", data), dtype=complex)


def point_source_fields(grid: Grid, probes, points) -> np.ndarray:
    """G_b(r_m, z) = -(j/4) k^2 H0^(2)(k|r_m - z|), shape (n_rx, n_points)."""
    from scipy import special
    k = grid.k
    rx = probes.rx_positions
    pts = np.atleast_2d(points)
    rho = np.hypot(rx[:, None, 0] - pts[None, :, 0], rx[:, None, 1] - pts[None, :, 1])
    return -0.25j * k**2 * (special.jv(0, k * rho) - 1j * special.yv(0, k * rho))


def default_reg(F) -> float:
    s = np.linalg.svd(F, compute_uv=False)
    return DEFAULT_REG_FACTOR * float(s[0]) ** 2


def tikhonov_solve(F, g, reg: float) -> np.ndarray:
    """alpha = (F^H F + reg I)^-1 F^H g, column by column, via the SVD."""
    U, s, Vh = np.linalg.svd(F, full_matrices=False)
    filt = s / (s**2 + reg)
    return Vh.conj().T @ (filt[:, None] * (U.conj().T @ g))


def lsm_indicator(data: MultistaticData, grid: Grid, reg: float | None = None) -> np.ndarray:
    """Sampling indicator 1/||alpha_z|| at every cell centre of ``grid``."""
    F = _data_matrix(data)
    if F.shape[1] < 2:
        raise ValueError("the indicator needs at least two transmitters")
    if np.linalg.matrix_rank(F) == 0:
        raise ValueError("degenerate (rank 0) data matrix")
    reg = default_reg(F) if reg is None else reg
    g = point_source_fields(grid, data.probes, grid.points)
    alpha = tikhonov_solve(F, g, reg)
    return 1.0 / np.linalg.norm(alpha, axis=0)


@dataclass(frozen=True, eq=False)
class VirtualExperiment:
    """One virtual experiment focused on ``pivot``."""

    pivot: np.ndarray
    alpha: np.ndarray
    incident: np.ndarray
    scattered: np.ndarray


def superpose(values, alpha):
    """Weighted sum over the transmitter axis (the last one).

    ``alpha`` may be a vector (one experiment) or an (N_T, P) matrix.
    """
    return np.asarray(values) @ np.asarray(alpha)


def _inside(grid: Grid, pivot) -> bool:
    half = grid.side / 2
    return abs(pivot[0]) <= half and abs(pivot[1]) <= half


def design_ve(data: MultistaticData, pivot, grid: Grid, reg: float | None = None,
              alpha=None, incident=None) -> VirtualExperiment:
    """Design the virtual experiment focusing the contrast sources at ``pivot``.

    ``alpha`` overrides the design (e.g. a one-hot vector reproduces an
    original experiment).
    """
    pivot = np.asarray(pivot, dtype=float)
    if not _inside(grid, pivot):
        raise ValueError(f"pivot {tuple(pivot)} lies outside the investigation domain")
    F = _data_matrix(data)
    if alpha is None:
        reg = default_reg(F) if reg is None else reg
        g = point_source_fields(grid, data.probes, pivot)[:, 0]
        alpha = tikhonov_solve(F, g[:, None], reg)[:, 0]
    alpha = np.asarray(alpha, dtype=complex)
    inc = incident_fields(grid, data.probes) if incident is None else incident
    return VirtualExperiment(pivot, alpha, superpose(inc, alpha), superpose(F, alpha))


@dataclass(frozen=True, eq=False)
class PivotSet:
    points: np.ndarray
    scores: np.ndarray
    cells: np.ndarray


def select_pivots(indicator, grid: Grid, P: int, min_separation: float) -> PivotSet:
    """Greedy choice of the P highest-indicator cells at least ``min_separation`` apart.

    Ties break by the lower flat cell index.
    """
    if P < 1:
        raise ValueError("P must be >= 1")
    ind = np.asarray(indicator, dtype=float)
    # stable sort on -ind keeps the lexicographic order among ties
    order = np.argsort(-ind, kind="stable")
    pts = grid.points
    chosen = []
    for i in order:
        if all(np.hypot(*(pts[i] - pts[j])) >= min_separation for j in chosen):
            chosen.append(i)
            if len(chosen) == P:
                break
    if len(chosen) < P:
        log.warning("only %d admissible pivots for P=%d", len(chosen), P)
    cells = np.array(chosen, dtype=int)
    return PivotSet(pts[cells], ind[cells], cells)


def design_ves(data: MultistaticData, pivots, grid: Grid, reg: float | None = None) -> list[VirtualExperiment]:
    inc = incident_fields(grid, data.probes)
    pts = getattr(pivots, "points", pivots)
    return [design_ve(data, p, grid, reg, incident=inc) for p in pts]


def ve_to_csv(ves, path):
    """One row per experiment: pivot x, y, then alpha re/im per transmitter."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        n_t = ves[0].alpha.size if ves else 0
        w.writerow(["x", "y"] + [f"{p}{t}" for t in range(n_t) for p in ("re", "im")])
        for ve in ves:
            row = [repr(float(ve.pivot[0])), repr(float(ve.pivot[1]))]
            for a in ve.alpha:
                row += [repr(float(a.real)), repr(float(a.imag))]
            w.writerow(row)


def ve_from_csv(path):
    """Read back (pivots, alphas) written by :func:`ve_to_csv`."""
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    pivots = rows[:, :2]
    alphas = rows[:, 2::2] + 1j * rows[:, 3::2]
    return pivots, alphas


__all__ = ["lsm_indicator", "design_ve", "design_ves", "superpose", "select_pivots",
           "VirtualExperiment", "PivotSet", "ve_to_csv", "ve_from_csv", "point_source_fields"]
