"""Forward scattering: state solves, Neumann series, radiation, Mie oracle."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy import special

from .domain import ContrastMap, Grid, ProbeRing
from .errors import SolverError
from .dnl import spectral_norm
from .models import ModifiedModel, compute_F_J0, internal_operator, j0_operator
from .operators import DiscreteOperator, assemble_external

COND_LIMIT = 1e12


def incident_fields(grid: Grid, probes: ProbeRing, points=None) -> np.ndarray:
    """Line-source incident fields -(j/4) omega mu H0^(2)(k|r - r_t|).

    Returns an array of shape ``(n_points, n_tx)``; points default to the
    active cell centres.
    """
    pts = grid.points if points is None else np.asarray(points)
    src = probes.tx_positions
    rho = np.hypot(pts[:, None, 0] - src[None, :, 0], pts[:, None, 1] - src[None, :, 1])
    med = grid.medium
    return -0.25j * med.omega * med.mu * (special.jv(0, med.k * rho) - 1j * special.yv(0, med.k * rho))


@dataclass(frozen=True, eq=False)
class MultistaticData:
    """Scattered field samples, ``values[m, t]`` for receiver m and transmitter t."""

    values: np.ndarray
    probes: ProbeRing
    frequency: float

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.shape != (self.probes.n_rx, self.probes.n_tx):
            raise ValueError(f"data shape {v.shape} != ({self.probes.n_rx}, {self.probes.n_tx})")
        if not np.all(np.isfinite(v)):
            raise ValueError("data contain non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n_r", "n_t", "frequency", "ring_radius"])
            w.writerow([self.probes.n_rx, self.probes.n_tx, repr(float(self.frequency)), repr(float(self.probes.radius))])
            w.writerow(["m", "t", "re", "im"])
            for m in range(self.probes.n_rx):
                for t in range(self.probes.n_tx):
                    z = self.values[m, t]
                    w.writerow([m, t, repr(float(z.real)), repr(float(z.imag))])

    @classmethod
    def from_csv(cls, path, probes: ProbeRing | None = None):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        n_r, n_t = int(rows[1][0]), int(rows[1][1])
        freq, radius = float(rows[1][2]), float(rows[1][3])
        if probes is None:
            probes = ProbeRing.uniform(radius, n_t, n_r)
        vals = np.zeros((n_r, n_t), dtype=complex)
        for r in rows[3:]:
            vals[int(r[0]), int(r[1])] = float(r[2]) + 1j * float(r[3])
        return cls(vals, probes, freq)


@dataclass(frozen=True, eq=False)
class SolutionField:
    """Contrast sources ``W`` (n_cells, n_views) and optionally total fields."""

    W: np.ndarray
    E_t: np.ndarray | None = None


def _views(incident):
    inc = np.asarray(incident, dtype=complex)
    return inc[:, None] if inc.ndim == 1 else inc


def solve_state(model: ModifiedModel, chi: ContrastMap, incident, f_j0=None) -> SolutionField:
    """Direct dense solve of the model's state equation for every view.

    For Y0 models with ``f_j0=None`` the J0 term is kept implicit (it
    depends on the unknown sources), which makes the solve exact.
    """
    inc = _views(incident)
    c = model.to_mod(chi).values
    A = model.operator.matrix
    n = A.shape[0]
    system = np.eye(n, dtype=complex) - c[:, None] * A
    if model.kind.uses_y0:
        coupling = -0.25j * model.grid.k**2 * j0_operator(model.grid).matrix
        if f_j0 is None:
            s = model.source_scale
            inv_s = (1.0 / s)[None, :] if s.ndim else 1.0 / s
            system -= c[:, None] * coupling * inv_s
            rhs = c[:, None] * inc
        else:
            rhs = c[:, None] * model.modified_incident(inc, _views(f_j0))
    else:
        rhs = c[:, None] * inc
    if not np.any(c):
        X = np.zeros_like(rhs)
    else:
        lu, piv = sla.lu_factor(system, check_finite=False)
        if np.any(np.abs(np.diag(lu)) == 0):
            raise SolverError("state equation is singular")
        rcond = _rcond(system, lu, piv)
        if rcond < 1.0 / COND_LIMIT:
            raise SolverError(f"state equation ill-conditioned (cond ~ {1 / rcond:.3g})")
        X = sla.lu_solve((lu, piv), rhs, check_finite=False)
    W = model.from_mod_sources(X)
    E_t = inc + internal_operator(model.grid) @ W
    return SolutionField(W, E_t)


def _rcond(a, lu, piv):
    anorm = np.linalg.norm(a, 1)
    gecon = sla.get_lapack_funcs("gecon", (lu,))
    rcond, info = gecon(lu, anorm, norm="1")
    return rcond


def neumann_solve(model: ModifiedModel, chi: ContrastMap, incident, n_terms: int, f_j0=None):
    """Partial Neumann sum of (I - c A_mod)^{-1} applied to c E_mod.

    Returns ``(solution, bound)`` with ``bound = q^{n+1} / (1 - q)`` where
    q is the spectral norm of c A_mod, or ``inf`` when q >= 1.  The bound
    limits ``||W_n - W|| / ||W_0||`` (error relative to the first term).
    """
    if n_terms < 0:
        raise ValueError("n_terms must be >= 0")
    inc = _views(incident)
    c = model.to_mod(chi).values
    T = c[:, None] * model.operator.matrix
    term = c[:, None] * model.modified_incident(inc, None if f_j0 is None else _views(f_j0))
    X = term.copy()
    for _ in range(n_terms):
        term = T @ term
        X += term
    q = spectral_norm(T)
    bound = q ** (n_terms + 1) / (1 - q) if q < 1 else math.inf
    return SolutionField(model.from_mod_sources(X)), bound


def radiate(A_e: DiscreteOperator, W, probes: ProbeRing | None = None, frequency: float | None = None):
    """Scattered field at the receivers, ``A_e @ W`` per view."""
    W = W.W if isinstance(W, SolutionField) else np.asarray(W)
    values = A_e @ W
    if probes is None:
        return values
    return MultistaticData(values, probes, frequency if frequency is not None else A_e.grid.medium.frequency)


def mie_circular(radius: float, chi: complex, probes: ProbeRing, medium, n_harmonics: int | None = None,
                 tail_tol: float = 1e-10) -> MultistaticData:
    """Scattered field of a centred homogeneous disc under line-source incidence.

    Uses the cylindrical-harmonic series with the same source amplitude as
    :func:`incident_fields`.  Raises if the truncated tail is above
    ``tail_tol`` relative to the field.
    """
    k0 = medium.k
    k1 = k0 * np.sqrt(1 + complex(chi))
    amp = -0.25j * medium.omega * medium.mu
    if radius <= 0 or chi == 0:
        return MultistaticData(np.zeros((probes.n_rx, probes.n_tx)), probes, medium.frequency)
    if n_harmonics is None:
        n_harmonics = int(abs(k1) * radius + 4 * (abs(k1) * radius) ** (1 / 3) + 15)
    n = np.arange(0, n_harmonics + 2)
    x0, x1 = k0 * radius, k1 * radius
    j0, j0p = special.jv(n, x0), special.jvp(n, x0)
    h0 = special.hankel2(n, x0)
    h0p = special.h2vp(n, x0)
    j1, j1p = special.jv(n, x1), special.jvp(n, x1)
    b = -(k0 * j0p * j1 - k1 * j0 * j1p) / (k0 * h0p * j1 - k1 * h0 * j1p)
    hr = special.hankel2(n, k0 * probes.radius)
    coef = amp * b * hr * hr
    dphi = probes.rx_angles[:, None] - probes.tx_angles[None, :]
    weights = np.where(n == 0, 1.0, 2.0)
    terms = coef[:, None, None] * weights[:, None, None] * np.cos(n[:, None, None] * dphi[None])
    total = terms[:-1].sum(axis=0)
    tail = np.abs(terms[-2:]).sum(axis=0).max()
    if tail > tail_tol * max(np.abs(total).max(), 1e-300):
        raise SolverError(f"Mie series not converged with {n_harmonics} harmonics")
    return MultistaticData(total, probes, medium.frequency)


def add_noise(data: MultistaticData, snr_db: float, seed: int) -> MultistaticData:
    """Add circular complex Gaussian noise at a global SNR (whole data set)."""
    if math.isinf(snr_db) and snr_db > 0:
        return data
    power = float(np.sum(np.abs(data.values) ** 2))
    if power == 0:
        raise ValueError("cannot add noise at a finite SNR to zero data")
    rng = np.random.default_rng(seed)
    shape = data.values.shape
    sigma2 = power * 10 ** (-snr_db / 10) / data.values.size
    noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    # rescale the draw so the realized SNR is exact
    noise *= math.sqrt(sigma2 * data.values.size / np.sum(np.abs(noise) ** 2))
    return MultistaticData(data.values + noise, data.probes, data.frequency)


def synthesize(model: ModifiedModel, chi: ContrastMap, probes: ProbeRing) -> tuple[MultistaticData, SolutionField]:
    """Incident fields, exact state solve and radiation in one call."""
    grid = model.grid
    sol = solve_state(model, chi, incident_fields(grid, probes))
    data = radiate(assemble_external(grid, probes), sol, probes, grid.medium.frequency)
    return data, sol


__all__ = ["MultistaticData", "SolutionField", "incident_fields", "solve_state", "neumann_solve",
           "radiate", "mie_circular", "add_noise", "synthesize", "compute_F_J0"]
