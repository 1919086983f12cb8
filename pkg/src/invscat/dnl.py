"""Degree-of-non-linearity analytics.

The non-linearity of a rewriting is gauged by ||chi_mod A_mod||, bounded by
||chi_mod|| ||A_mod|| with ||chi_mod|| = max |chi_mod| and ||A_mod|| the
spectral norm of the discretized operator.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, svds

from .domain import BackgroundMedium, ContrastMap, Grid, disc_grid
from .errors import ConfigurationError, SingularMapError
from .models import build_modified_model, chi_to_p, chi_to_R
from .operators import compute_fD

DENSE_LIMIT = 512
FEASIBILITY_THRESHOLD = 2.0


def spectral_norm(matrix, dense_limit: int = DENSE_LIMIT) -> float:
    """Largest singular value of a dense matrix.

    Small matrices go through a full SVD; larger ones through a Lanczos
    iteration on A^H A (ARPACK), started from a fixed vector.
    """
    a = np.asarray(matrix)
    if a.size == 0 or not np.any(a):
        return 0.0
    if min(a.shape) <= dense_limit:
        return float(sla.svdvals(a, check_finite=False)[0])
    v0 = np.ones(min(a.shape), dtype=a.dtype)
    s = svds(a if a.shape[0] >= a.shape[1] else a.conj().T, k=1, tol=1e-12,
             v0=v0 if a.shape[0] >= a.shape[1] else None,
             return_singular_vectors=False, solver="arpack")
    return float(s[0])


def operator_norm(op) -> float:
    """Spectral norm of a DiscreteOperator or plain matrix."""
    return spectral_norm(getattr(op, "matrix", op))


def contrast_norm(chi_mod) -> float:
    """max |chi_mod| over the cells."""
    v = np.asarray(getattr(chi_mod, "values", chi_mod))
    return float(np.abs(v).max()) if v.size else 0.0


def dnl_bound(kind, chi: ContrastMap, grid: Grid, model=None) -> float:
    """||chi_mod|| * ||A_mod|| for the rewriting ``kind``."""
    if not np.any(chi.values):
        return 0.0
    model = model or build_modified_model(kind, grid)
    return contrast_norm(model.to_mod(chi)) * operator_norm(model.operator)


@dataclass(frozen=True)
class Verdict:
    recoverable: bool
    bound: float

    @property
    def label(self) -> str:
        return "likely-recoverable" if self.recoverable else "not-recoverable"


def feasibility_heuristic(kind, chi: ContrastMap, grid: Grid, model=None) -> Verdict:
    """Rule of thumb: inversion is likely free of false solutions if the bound is < 2."""
    b = dnl_bound(kind, chi, grid, model)
    return Verdict(b < FEASIBILITY_THRESHOLD, b)


def neumann_terms_needed(q: float, tol: float):
    """Smallest n with q^{n+1} / (1 - q) <= tol, or None if q >= 1."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if q < 0:
        raise ValueError("q must be non-negative")
    if q >= 1:
        return None
    if q == 0:
        return 0
    n = max(0, math.ceil(math.log(tol * (1 - q)) / math.log(q) - 1))
    while n > 0 and q ** n / (1 - q) <= tol:
        n -= 1
    while q ** (n + 1) / (1 - q) > tol:
        n += 1
    return n


@dataclass(frozen=True, eq=False)
class NormCurve:
    """A norm versus one sweep variable for one model.

    ``axis`` names the sweep variable; it defaults to the domain radius in
    wavelengths.  Several curves may share one CSV file.
    """

    model: str
    radii: np.ndarray
    norms: np.ndarray
    parameter: str = ""
    axis: str = "r_over_lambda"

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        n = np.asarray(self.norms, dtype=float)
        if r.shape != n.shape:
            raise ValueError("radii and norms differ in length")
        if np.any(np.diff(r) <= 0):
            raise ValueError("radii must be strictly increasing")
        if np.any(n < 0):
            raise ValueError("norms must be non-negative")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "norms", n)

    def _rows(self):
        for r, v in zip(self.radii, self.norms):
            yield [repr(float(r)), repr(float(v)), self.model, self.parameter]

    def to_csv(self, path):
        write_curves([self], path)

    @classmethod
    def from_csv(cls, path, parameter: str | None = None) -> "NormCurve":
        """Read one curve; ``parameter`` picks it out of a multi-curve file."""
        curves = read_curves(path)
        if parameter is not None:
            curves = [c for c in curves if c.parameter == parameter]
        if len(curves) != 1:
            raise ValueError(f"{path}: expected one curve, found {len(curves)}")
        return curves[0]


def write_curves(curves, path):
    axis = curves[0].axis if curves else "r_over_lambda"
    if any(c.axis != axis for c in curves):
        raise ValueError("curves in one file must share the sweep axis")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([axis, "norm", "model", "parameter"])
        for c in curves:
            w.writerows(c._rows())


def read_curves(path) -> list[NormCurve]:
    """All curves in a CSV, grouped by (model, parameter) in file order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(reader)
    if not header or not rows:
        raise ValueError(f"{path}: empty norm curve")
    groups: dict = {}
    for r in rows:
        groups.setdefault((r[2], r[3]), []).append((float(r[0]), float(r[1])))
    return [NormCurve(m, [x for x, _ in v], [y for _, y in v], p, header[0])
            for (m, p), v in groups.items()]


def default_medium() -> BackgroundMedium:
    return BackgroundMedium(300e6)


def norm_curve(kind, radii, cells_per_lambda: int = 12, medium: BackgroundMedium | None = None) -> NormCurve:
    """Spectral norm of A_mod on discs of radius ``radii`` (in wavelengths).

    All discs are cut from one lattice of pitch lambda / cells_per_lambda,
    so each operator is a principal submatrix of the next one.
    """
    if cells_per_lambda < 10:
        raise ConfigurationError("need at least 10 cells per wavelength")
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0) or np.any(radii <= 0):
        raise ConfigurationError("radii must be positive and strictly increasing")
    medium = medium or default_medium()
    lam = medium.wavelength
    grid = disc_grid(radii[-1] * lam, lam / cells_per_lambda, medium)
    model = build_modified_model(kind, grid)
    A = model.operator.matrix
    r = np.hypot(grid.points[:, 0], grid.points[:, 1])
    norms = []
    for rd in radii:
        idx = np.flatnonzero(r <= rd * lam)
        if idx.size == 0:
            raise ConfigurationError(f"no cells inside r_D = {rd:g} lambda; raise cells_per_lambda")
        norms.append(spectral_norm(A[np.ix_(idx, idx)]))
    param = kind.parameter
    if kind.tag == "cseb":
        param = f"a={kind.a / lam:g}lambda"
    elif param is not None:
        param = f"beta={complex(param).real:g}" if np.ndim(param) == 0 else "beta=array"
    return NormCurve(kind.tag, radii, np.array(norms), param or "")


def r_norm_sweep(chi: complex, betas) -> np.ndarray:
    """max |R| for a homogeneous contrast ``chi`` as a function of beta."""
    return np.array([contrast_norm(chi_to_R(ContrastMap([chi]), b)) for b in betas])


@dataclass(frozen=True, eq=False)
class PSweep:
    a: np.ndarray
    norms: np.ndarray
    min_denominator: np.ndarray
    singular: np.ndarray

    def peaks(self) -> np.ndarray:
        """Indices of interior local maxima of ||p||(a)."""
        n = self.norms
        return np.flatnonzero((n[1:-1] > n[:-2]) & (n[1:-1] > n[2:])) + 1

    def flagged_peaks(self, threshold: float = 0.1) -> np.ndarray:
        """Interior maxima where min |1 - chi f_D| falls below ``threshold``."""
        p = self.peaks()
        return p[self.min_denominator[p] < threshold]


def p_norm_sweep(chi: complex, a_values, disc_radius: float, cells_per_lambda: int = 20,
                 medium: BackgroundMedium | None = None) -> PSweep:
    """max |p| over a homogeneous disc versus the CS-EB radius ``a``.

    ``disc_radius`` and ``a_values`` are in wavelengths.  Singular points
    (|1 - chi f_D| below the map guard) are reported with an infinite norm.
    """
    medium = medium or default_medium()
    lam = medium.wavelength
    grid = disc_grid(disc_radius * lam, lam / cells_per_lambda, medium)
    c = ContrastMap(np.full(grid.n_cells, complex(chi)))
    norms, dens, sing = [], [], []
    for a in a_values:
        f_D = compute_fD(grid, a * lam)
        dens.append(float(np.abs(1 - c.values * f_D).min()))
        try:
            norms.append(contrast_norm(chi_to_p(c, f_D)))
            sing.append(False)
        except SingularMapError:
            norms.append(math.inf)
            sing.append(True)
    return PSweep(np.asarray(a_values, float), np.array(norms), np.array(dens), np.array(sing))
