"""Method-of-moments discretization of the radiation operators.

Every cell is replaced by the disc of equal area (Richmond's rule), which
gives closed forms for all cell integrals of the 2D Green's function

    G_b(r, r') = -(j/4) k^2 H0^(2)(k |r - r'|).

With ``a`` the equivalent disc radius and ``rho`` the centre distance:

* off-diagonal:  -(j pi k a / 2) J1(k a) H0^(2)(k rho)
* self term:     -(j pi k a / 2) H1^(2)(k a) - 1
* J0 kernel:     (2 pi a / k) J1(k a) J0(k rho), including rho = 0
* Y0 kernel:     -(pi k a / 2) J1(k a) Y0(k rho) off the diagonal, and the
  self term of A_i minus the J0 part on it, so that
  A_i = -j (k^2 / 4) C_J0 + A_i^Y0 holds entry by entry.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .domain import Grid, ProbeRing
from .errors import ConfigurationError
from .specfun import bessel_j, bessel_y, hankel2

OPERATOR_KINDS = ("internal", "external", "internal-Y0", "internal-modified", "j0-convolution")

_CHUNK = 512


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Dense matrix realization of a radiation operator.

    Rows index observation points, columns index source cells.
    """

    matrix: np.ndarray
    kind: str
    grid: Grid

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("operator has non-finite entries")

    @property
    def shape(self):
        return self.matrix.shape

    @cached_property
    def H(self) -> np.ndarray:
        """Conjugate transpose, cached as a contiguous array."""
        return np.ascontiguousarray(self.matrix.conj().T)

    def __matmul__(self, other):
        return self.matrix @ other

    def to_csv(self, path):
        """Debug dump: ``row, col, re, im`` per entry, row-major."""
        m = self.matrix
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "re", "im"])
            for i in range(m.shape[0]):
                for j in range(m.shape[1]):
                    w.writerow([i, j, repr(float(m[i, j].real)), repr(float(m[i, j].imag))])

    @classmethod
    def from_csv(cls, path, kind, grid):
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        rows, cols = data[:, 0].astype(int), data[:, 1].astype(int)
        m = np.zeros((rows.max() + 1, cols.max() + 1), dtype=complex)
        m[rows, cols] = data[:, 2] + 1j * data[:, 3]
        return cls(m, kind, grid)


def green2d(r, r_src, k: float) -> complex:
    """Free-space 2D Green's function -(j/4) k^2 H0^(2)(k |r - r_src|)."""
    d = float(np.hypot(r[0] - r_src[0], r[1] - r_src[1]))
    if d == 0.0:
        raise ConfigurationError("green2d is singular at coincident points")
    return -0.25j * k**2 * hankel2(0, k * d)


def _disc_weights(grid: Grid):
    ka = grid.k * grid.a_cell
    j1 = bessel_j(1, ka)
    return ka, j1


def self_term(grid: Grid) -> complex:
    """Integral of G_b over the equal-area disc, observed at its centre."""
    ka = grid.k * grid.a_cell
    return -0.5j * np.pi * ka * hankel2(1, ka) - 1.0


def _lattice_indices(grid: Grid):
    iy, ix = np.divmod(np.flatnonzero(grid.active), grid.nx)
    return iy, ix


def _toeplitz_assemble(grid: Grid, kernel, diag) -> np.ndarray:
    """Fill a cell-to-cell matrix from a kernel of the centre distance.

    ``kernel`` maps distances (> 0) to entries; it is tabulated once over all
    lattice offsets, then gathered row-chunk by row-chunk.
    """
    dy = np.arange(grid.ny) * grid.dy
    dx = np.arange(grid.nx) * grid.dx
    rho = np.hypot(dy[:, None], dx[None, :])
    rho[0, 0] = 1.0
    table = np.asarray(kernel(rho), dtype=complex)
    table[0, 0] = diag
    iy, ix = _lattice_indices(grid)
    n = iy.size
    out = np.empty((n, n), dtype=complex)
    for s in range(0, n, _CHUNK):
        e = min(s + _CHUNK, n)
        out[s:e] = table[np.abs(iy[s:e, None] - iy[None, :]), np.abs(ix[s:e, None] - ix[None, :])]
    return out


def assemble_internal(grid: Grid) -> DiscreteOperator:
    """Internal radiation operator A_i (cell to cell)."""
    k = grid.k
    ka, j1 = _disc_weights(grid)
    w = -0.5j * np.pi * ka * j1
    m = _toeplitz_assemble(grid, lambda rho: w * hankel2(0, k * rho), self_term(grid))
    return DiscreteOperator(m, "internal", grid)


def assemble_j0_convolution(grid: Grid) -> DiscreteOperator:
    """Cell-integrated J0(k|r - r'|) kernel, the operator behind F_J0."""
    k = grid.k
    ka, j1 = _disc_weights(grid)
    w = 2 * np.pi * grid.a_cell / k * j1
    m = _toeplitz_assemble(grid, lambda rho: w * bessel_j(0, k * rho), w)
    return DiscreteOperator(m, "j0-convolution", grid)


def j0_self_integral(grid: Grid) -> float:
    ka, j1 = _disc_weights(grid)
    return 2 * np.pi * grid.a_cell / grid.k * j1


def assemble_y0_internal(grid: Grid) -> DiscreteOperator:
    """A_i^Y0 = -(k^2/4) * (cell-integrated Y0 kernel)."""
    k = grid.k
    ka, j1 = _disc_weights(grid)
    w = -0.5 * np.pi * ka * j1
    diag = self_term(grid) + 0.25j * k**2 * j0_self_integral(grid)
    m = _toeplitz_assemble(grid, lambda rho: w * bessel_y(0, k * rho), diag)
    return DiscreteOperator(m, "internal-Y0", grid)


def external_matrix(grid: Grid, points: np.ndarray) -> np.ndarray:
    """Cell-to-point radiation matrix for observation points outside D."""
    k = grid.k
    ka, j1 = _disc_weights(grid)
    pts = grid.points
    rho = np.hypot(points[:, None, 0] - pts[None, :, 0], points[:, None, 1] - pts[None, :, 1])
    if np.any(rho <= grid.a_cell):
        raise ConfigurationError("observation point inside an integration cell")
    return -0.5j * np.pi * ka * j1 * hankel2(0, k * rho)


def assemble_external(grid: Grid, probes: ProbeRing) -> DiscreteOperator:
    """External radiation operator A_e from the cells to the receivers."""
    probes.check_outside(grid)
    return DiscreteOperator(external_matrix(grid, probes.rx_positions), "external", grid)


def compute_fD(grid: Grid, a: float) -> np.ndarray:
    """f_D(r) of the CS-EB rewriting for a disc of radius ``a`` at the origin."""
    if a <= 0:
        raise ConfigurationError("f_D radius must be positive")
    k = grid.k
    r = np.hypot(grid.points[:, 0], grid.points[:, 1])
    return -0.5j * np.pi * k * a * hankel2(1, k * a) * bessel_j(0, k * r) - 1.0
