"""State-equation rewritings sharing the structure

    W_mod = chi_mod * E_mod + chi_mod * A_mod[W_mod]

for the H0, CS-EB, NIE, Y0 and Y0-NIE models.

=========  ========  ============  ===============================  ==================
model      W_mod     chi_mod       E_mod                            A_mod
=========  ========  ============  ===============================  ==================
H0         W         chi           E_i                              A_i
CSEB(a)    W         p             E_i                              A_i - f_D I
NIE(b)     b W       R             E_i                              A_i / b + I
Y0         W         chi           E_i - j (k^2/4) F_J0             A_i^Y0
Y0NIE(b)   b W       R             E_i - j (k^2/4) F_J0             A_i^Y0 / b + I
=========  ========  ============  ===============================  ==================

with p = chi / (1 - chi f_D) and R = b chi / (b chi + 1).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .domain import ContrastMap, Grid, ProbeRing
from .errors import ConfigurationError, SingularMapError
from .operators import (DiscreteOperator, assemble_internal, assemble_j0_convolution,
                        assemble_y0_internal, compute_fD)
from .specfun import bessel_j, hankel2

EPS_SING = 1e-8

MODEL_TAGS = ("h0", "cseb", "nie", "y0", "y0nie")


@dataclass(frozen=True, eq=False)
class ModelKind:
    """Which rewriting to use and its parameter.

    ``a`` is the CS-EB disc radius in metres; ``beta`` the NIE weight, a
    complex constant or a per-cell array.
    """

    tag: str
    a: float | None = None
    beta: complex | np.ndarray | None = None

    def __post_init__(self):
        if self.tag not in MODEL_TAGS:
            raise ConfigurationError(f"unknown model {self.tag!r}; expected one of {MODEL_TAGS}")
        if self.tag == "cseb" and (self.a is None or self.a <= 0):
            raise ConfigurationError("CS-EB needs a positive radius a")
        if self.tag in ("nie", "y0nie"):
            if self.beta is None or np.any(np.asarray(self.beta) == 0):
                raise ConfigurationError("NIE models need a nonzero beta")

    @classmethod
    def h0(cls):
        return cls("h0")

    @classmethod
    def cseb(cls, a):
        return cls("cseb", a=a)

    @classmethod
    def nie(cls, beta=1.0):
        return cls("nie", beta=beta)

    @classmethod
    def y0(cls):
        return cls("y0")

    @classmethod
    def y0nie(cls, beta=1.0):
        return cls("y0nie", beta=beta)

    @property
    def uses_R(self) -> bool:
        return self.tag in ("nie", "y0nie")

    @property
    def uses_y0(self) -> bool:
        return self.tag in ("y0", "y0nie")

    @property
    def parameter(self):
        if self.tag == "cseb":
            return self.a
        if self.uses_R:
            return self.beta
        return None

    def label(self) -> str:
        p = self.parameter
        if p is None:
            return self.tag
        if np.ndim(p):
            return f"{self.tag}(array)"
        return f"{self.tag}({complex(p).real:g})" if complex(p).imag == 0 else f"{self.tag}({p})"

    def to_config(self, wavelength=None) -> dict:
        d = {"model": self.tag}
        if self.tag == "cseb":
            d["a"] = self.a if wavelength is None else f"{self.a / wavelength:g} lambda"
        if self.uses_R and np.ndim(self.beta) == 0:
            b = complex(self.beta)
            d["beta"] = b.real if b.imag == 0 else [b.real, b.imag]
        return d


def _guard(den, what):
    bad = np.flatnonzero(np.abs(den) <= EPS_SING)
    if bad.size:
        raise SingularMapError(f"{what}: near-zero denominator at {bad.size} cell(s)", bad)


def chi_to_p(chi: ContrastMap, f_D) -> ContrastMap:
    x = chi.values
    den = 1 - x * f_D
    _guard(den, "chi -> p")
    return ContrastMap(x / den, "p")


def p_to_chi(p: ContrastMap, f_D) -> ContrastMap:
    x = p.values
    den = 1 + x * f_D
    _guard(den, "p -> chi")
    return ContrastMap(x / den, "chi")


def chi_to_R(chi: ContrastMap, beta) -> ContrastMap:
    bx = np.asarray(beta) * chi.values
    den = bx + 1
    _guard(den, "chi -> R")
    return ContrastMap(bx / den, "R")


def R_to_chi(R: ContrastMap, beta) -> ContrastMap:
    x = R.values
    den = 1 - x
    _guard(den, "R -> chi")
    return ContrastMap(x / (np.asarray(beta) * den), "chi")


@lru_cache(maxsize=2)
def _internal(grid):
    return assemble_internal(grid)


@lru_cache(maxsize=2)
def _y0(grid):
    return assemble_y0_internal(grid)


@lru_cache(maxsize=2)
def _j0(grid):
    return assemble_j0_convolution(grid)


def internal_operator(grid: Grid) -> DiscreteOperator:
    """Cached ``assemble_internal``."""
    return _internal(grid)


def y0_operator(grid: Grid) -> DiscreteOperator:
    return _y0(grid)


def j0_operator(grid: Grid) -> DiscreteOperator:
    return _j0(grid)


def compute_F_J0(W, grid: Grid) -> np.ndarray:
    """F_J0 = integral of J0(k|r - r'|) W(r') over D, per view (columns)."""
    return j0_operator(grid) @ np.asarray(W)


def _fit_harmonics(values, angles, n_max):
    n = np.arange(-n_max, n_max + 1)
    basis = np.exp(1j * np.outer(angles, n))
    coef, *_ = np.linalg.lstsq(basis, values, rcond=None)
    return n, coef


def estimate_F_J0_from_data(data, probes: ProbeRing, grid: Grid, n_harmonics: int | None = None,
                            noise_floor: float | None = None) -> np.ndarray:
    """Recover F_J0 inside D from multistatic scattered fields.

    Per view the receiver samples are expanded in circular harmonics, each
    harmonic is divided by its radiation factor -(j k^2/4) H_n(k R) and the
    result is resynthesized with J_n(k r) e^{j n phi}.  Harmonic coefficients
    are soft-thresholded at three times ``noise_floor``; when no floor is
    given it is the median magnitude of the out-of-band harmonics, if any.
    """
    values = np.asarray(getattr(data, "values", data))
    single = values.ndim == 1
    if single:
        values = values[:, None]
    k = grid.k
    kr_d = k * grid.enclosing_radius
    limit = (probes.n_rx - 1) // 2
    if n_harmonics is None:
        n_harmonics = limit
    if n_harmonics < math.ceil(kr_d):
        warnings.warn(f"{n_harmonics} harmonics truncate a field of bandwidth ~{math.ceil(kr_d)}",
                      RuntimeWarning, stacklevel=2)
    if n_harmonics > limit:
        warnings.warn(f"{probes.n_rx} receivers resolve only |n| <= {limit}; "
                      f"truncating from {n_harmonics}", RuntimeWarning, stacklevel=2)
        n_harmonics = limit
    n, s = _fit_harmonics(values, probes.rx_angles, n_harmonics)
    if noise_floor is None:
        out = np.abs(n) > math.ceil(kr_d)
        noise_floor = float(np.median(np.abs(s[out]))) if out.any() else 0.0
    thr = 3.0 * noise_floor
    if thr > 0:
        mag = np.abs(s)
        s = s * np.maximum(0.0, 1.0 - thr / np.maximum(mag, 1e-300))
    na = np.abs(n)
    c = s / (-0.25j * k**2 * hankel2(na, k * probes.radius))[:, None]
    pts = grid.points
    r = np.hypot(pts[:, 0], pts[:, 1])
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    synth = bessel_j(na[None, :], k * r[:, None]) * np.exp(1j * np.outer(phi, n))
    out = synth @ c
    return out[:, 0] if single else out


@dataclass(frozen=True, eq=False)
class ModifiedModel:
    """A state-equation rewriting realized on a grid."""

    kind: ModelKind
    grid: Grid
    operator: DiscreteOperator
    f_D: np.ndarray | None = None

    @property
    def source_scale(self):
        """Factor s with W_mod = s * W."""
        return np.asarray(self.kind.beta) if self.kind.uses_R else np.asarray(1.0)

    def _scale_col(self):
        s = self.source_scale
        return s[:, None] if s.ndim else s

    def to_mod(self, chi: ContrastMap) -> ContrastMap:
        t = self.kind.tag
        if t == "cseb":
            return chi_to_p(chi, self.f_D)
        if self.kind.uses_R:
            return chi_to_R(chi, self.kind.beta)
        return chi

    def to_chi(self, chi_mod: ContrastMap) -> ContrastMap:
        t = self.kind.tag
        if t == "cseb":
            return p_to_chi(chi_mod, self.f_D)
        if self.kind.uses_R:
            return R_to_chi(chi_mod, self.kind.beta)
        return chi_mod

    @property
    def mod_kind(self) -> str:
        if self.kind.tag == "cseb":
            return "p"
        return "R" if self.kind.uses_R else "chi"

    def modified_incident(self, incident, f_j0=None):
        """E_mod from the incident field; Y0 models need ``f_j0``."""
        incident = np.asarray(incident)
        if not self.kind.uses_y0:
            return incident
        if f_j0 is None:
            raise ValueError("Y0 models need F_J0 to form the modified incident field")
        return incident - 0.25j * self.grid.k**2 * np.asarray(f_j0)

    def to_mod_sources(self, W):
        return self._scale_col() * np.asarray(W) if np.ndim(W) > 1 else self.source_scale * W

    def from_mod_sources(self, X):
        return np.asarray(X) / self._scale_col() if np.ndim(X) > 1 else X / self.source_scale

    def state_residual(self, chi: ContrastMap, W, incident, f_j0=None):
        """Residual X - c E_mod - c A_mod[X] for physical sources ``W``.

        For Y0 models F_J0 defaults to the exact convolution of ``W``.
        """
        W = np.asarray(W)
        if self.kind.uses_y0 and f_j0 is None:
            f_j0 = compute_F_J0(W, self.grid)
        X = self.to_mod_sources(W)
        c = self.to_mod(chi).values
        c = c[:, None] if X.ndim > 1 else c
        return X - c * self.modified_incident(incident, f_j0) - c * (self.operator @ X)

    def relative_state_residual(self, chi, W, incident, f_j0=None) -> float:
        r = self.state_residual(chi, W, incident, f_j0)
        return float(np.linalg.norm(r) / np.linalg.norm(self.to_mod_sources(np.asarray(W))))


def build_modified_model(kind: ModelKind, grid: Grid, probes: ProbeRing | None = None) -> ModifiedModel:
    """Assemble A_mod and the contrast maps for ``kind`` on ``grid``."""
    if probes is not None:
        probes.check_outside(grid)
    t = kind.tag
    if t == "h0":
        return ModifiedModel(kind, grid, internal_operator(grid))
    if t == "cseb":
        f_D = compute_fD(grid, kind.a)
        a_i = internal_operator(grid)
        m = a_i.matrix - np.diag(f_D)
        return ModifiedModel(kind, grid, DiscreteOperator(m, "internal-modified", grid), f_D)
    if t == "y0":
        return ModifiedModel(kind, grid, y0_operator(grid))
    base = internal_operator(grid) if t == "nie" else y0_operator(grid)
    beta = np.asarray(kind.beta)
    if beta.ndim == 0:
        m = base.matrix / complex(beta)
    else:
        if beta.shape != (grid.n_cells,):
            raise ConfigurationError("per-cell beta must have one value per cell")
        m = base.matrix / beta[None, :]
    m = m + np.eye(grid.n_cells)
    return ModifiedModel(kind, grid, DiscreteOperator(m, "internal-modified", grid))
