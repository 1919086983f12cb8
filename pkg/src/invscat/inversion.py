"""Contrast source inversion for any state-equation rewriting.

The cost minimized over the model sources X_v = s W_v and the model
contrast c is

    sum_v eta_S,v ||c E_v + c A X_v - X_v||^2 + eta_D,v ||D_v - A_e X_v / s||^2
          + sum_v tau_v ||Q_v X_v / s||^2

with eta_S,v = 1/||E_v||^2, eta_D,v = 1/||D_v||^2, E_v the model incident
field and Q_v the optional angular-variation operator of virtual experiment
v.  Gradients are Wirtinger gradients g = dPhi/dX*, so a perturbation dX
changes the cost by 2 Re<g, dX> to first order.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .domain import ContrastMap, Grid
from .errors import ConfigurationError
from .forward import MultistaticData
from .models import ModifiedModel, compute_F_J0, estimate_F_J0_from_data, j0_operator
from .operators import assemble_external

log = logging.getLogger(__name__)

CLAMP_TOL = 1e-3


@dataclass
class InversionOptions:
    max_iterations: int = 15000
    stall_tol: float = 1e-6
    stall_window: int = 50
    n_arm: int = 13
    tau: float | list | None = None
    tau_factor: float = 0.1
    neighborhood_radius: float | None = None
    n_rings: int = 5
    n_angles: int = 16
    fj0_refresh: int = 50
    fj0_harmonics: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if self.n_arm < 1 or self.n_arm % 2 == 0:
            raise ConfigurationError("n_arm must be a positive odd number")
        if self.tau is not None and np.any(np.asarray(self.tau) < 0):
            raise ConfigurationError("penalty weights must be non-negative")


def nmse(chi_true, chi_hat) -> float:
    """||chi - chi_hat||^2 / ||chi||^2."""
    a = np.asarray(getattr(chi_true, "values", chi_true))
    b = np.asarray(getattr(chi_hat, "values", chi_hat))
    den = float(np.vdot(a, a).real)
    if den == 0:
        raise ValueError("NMSE is undefined for a zero ground truth")
    return float(np.vdot(a - b, a - b).real) / den


def _freqs(n, n_arm):
    h = (n_arm - 1) // 2
    f = np.fft.fftfreq(n) * n
    return np.flatnonzero(np.abs(f) <= h)


def fourier_project(values, n_arm: int, grid: Grid) -> np.ndarray:
    """Keep the centred n_arm x n_arm block of the 2D DFT of a cell map."""
    if n_arm % 2 == 0 or n_arm > min(grid.nx, grid.ny):
        raise ConfigurationError("n_arm must be odd and not exceed the grid size")
    if grid.mask is not None:
        raise ConfigurationError("Fourier projection needs a full rectangular grid")
    img = np.asarray(values, dtype=complex).reshape(grid.ny, grid.nx)
    spec = np.fft.fft2(img)
    keep = np.zeros_like(spec, dtype=bool)
    keep[np.ix_(_freqs(grid.ny, n_arm), _freqs(grid.nx, n_arm))] = True
    spec[~keep] = 0
    return np.fft.ifft2(spec).ravel()


class FourierSubspace:
    """Weighted least squares restricted to the retained Fourier harmonics."""

    def __init__(self, grid: Grid, n_arm: int):
        if grid.mask is not None:
            raise ConfigurationError("Fourier projection needs a full rectangular grid")
        if n_arm > min(grid.nx, grid.ny):
            raise ConfigurationError("n_arm exceeds the grid size")
        self.grid = grid
        self.iy = _freqs(grid.ny, n_arm)
        self.ix = _freqs(grid.nx, n_arm)
        ky, kx = np.meshgrid(self.iy, self.ix, indexing="ij")
        self.ky, self.kx = ky.ravel(), kx.ravel()
        self.dky = (self.ky[:, None] - self.ky[None, :]) % grid.ny
        self.dkx = (self.kx[:, None] - self.kx[None, :]) % grid.nx

    def fit(self, weights, rhs) -> np.ndarray:
        """argmin_c sum w |c|^2 - 2 Re(conj(c) rhs) over band-limited c."""
        g = self.grid
        w_hat = np.fft.fft2(np.asarray(weights, dtype=float).reshape(g.ny, g.nx))
        b_hat = np.fft.fft2(np.asarray(rhs).reshape(g.ny, g.nx))
        G = w_hat[self.dky, self.dkx]
        b = b_hat[self.ky, self.kx]
        if not np.any(G):
            return np.zeros(g.n_cells, dtype=complex)
        theta = np.linalg.solve(G, b)
        spec = np.zeros((g.ny, g.nx), dtype=complex)
        spec[self.ky, self.kx] = theta
        return (np.fft.ifft2(spec) * (g.nx * g.ny)).ravel()


class AngularPenalty:
    """Angular variation of a field around a pivot, as a fixed linear map.

    The field is sampled by bilinear interpolation on ``n_rings`` rings of
    ``n_angles`` points inside the disc of ``radius`` around ``pivot``;
    d/dphi is taken spectrally on each ring and squared samples are weighted
    by rho d_rho d_phi.  ``Q`` maps cell values to weighted derivatives, so
    the penalty is ||Q W||^2.
    """

    def __init__(self, grid: Grid, pivot, radius: float, n_rings: int = 5, n_angles: int = 16):
        if radius <= 0:
            raise ValueError("neighbourhood radius must be positive")
        self.grid, self.pivot, self.radius = grid, np.asarray(pivot, float), radius
        d_rho = radius / n_rings
        d_phi = 2 * np.pi / n_angles
        phi = d_phi * np.arange(n_angles)
        m = np.fft.fftfreq(n_angles) * n_angles
        if n_angles % 2 == 0:
            m[n_angles // 2] = 0
        F = np.exp(-1j * np.outer(m, phi))
        D = (np.exp(1j * np.outer(phi, m)) * (1j * m)[None, :]) @ F / n_angles
        blocks, ring_r = [], []
        for i in range(1, n_rings + 1):
            rho = i * d_rho
            pts = self.pivot + rho * np.column_stack([np.cos(phi), np.sin(phi)])
            S = self._bilinear(pts)
            if S is None:
                continue
            blocks.append(math.sqrt(rho * d_rho * d_phi) * (D @ S))
            ring_r.append(rho)
        self.ring_radii = np.array(ring_r)
        self.ring_weights = self.ring_radii * d_rho * d_phi
        n = grid.n_cells
        self.Q = np.vstack(blocks) if blocks else np.zeros((0, n), dtype=complex)
        if not blocks:
            warnings.warn(f"angular penalty around {tuple(self.pivot)} has an empty neighbourhood",
                          RuntimeWarning, stacklevel=2)

    def _bilinear(self, pts):
        g = self.grid
        x, y = g.axes()
        fx = (pts[:, 0] - x[0]) / g.dx
        fy = (pts[:, 1] - y[0]) / g.dy
        if np.any(fx < 0) or np.any(fx > g.nx - 1) or np.any(fy < 0) or np.any(fy > g.ny - 1):
            return None
        i0 = np.minimum(np.floor(fx).astype(int), g.nx - 2)
        j0 = np.minimum(np.floor(fy).astype(int), g.ny - 2)
        t, u = fx - i0, fy - j0
        flat_to_active = np.full(g.nx * g.ny, -1)
        flat_to_active[g.active] = np.arange(g.n_cells)
        S = np.zeros((len(pts), g.n_cells))
        rows = np.arange(len(pts))
        for di, dj, w in ((0, 0, (1 - t) * (1 - u)), (1, 0, t * (1 - u)),
                          (0, 1, (1 - t) * u), (1, 1, t * u)):
            cols = flat_to_active[(j0 + dj) * g.nx + (i0 + di)]
            ok = cols >= 0
            np.add.at(S, (rows[ok], cols[ok]), w[ok])
        return S

    def value(self, W, tau: float = 1.0) -> float:
        q = self.Q @ W
        return tau * float(np.vdot(q, q).real)

    def gradient(self, W, tau: float = 1.0):
        return tau * (self.Q.conj().T @ (self.Q @ W))


def angular_penalty(W_p, pivot, radius: float, tau: float, grid: Grid, n_rings: int = 5, n_angles: int = 16):
    """Penalty value tau ||dW/dphi||^2 around ``pivot`` and its Wirtinger gradient."""
    pen = AngularPenalty(grid, pivot, radius, n_rings, n_angles)
    return pen.value(W_p, tau), pen.gradient(W_p, tau)


def backprop_init(A_e, data) -> np.ndarray:
    """W0 = gamma A_e^H D per view with the residual-minimizing complex gamma."""
    A = getattr(A_e, "matrix", A_e)
    D = np.asarray(getattr(data, "values", data), dtype=complex)
    D = D[:, None] if D.ndim == 1 else D
    bp = A.conj().T @ D
    u = A @ bp
    den = np.sum(np.abs(u) ** 2, axis=0)
    if not np.any(den):
        warnings.warn("zero data: back-propagation start is zero", RuntimeWarning, stacklevel=2)
    gamma = np.divide(np.sum(u.conj() * D, axis=0), den, out=np.zeros(D.shape[1], complex), where=den > 0)
    return bp * gamma[None, :]


class CostFunctional:
    """State + data (+ penalty) misfit for fixed model, data and incident fields."""

    def __init__(self, model: ModifiedModel, A_e, incident, data, penalties=None, tau=None):
        self.model = model
        self.A = model.operator.matrix
        self.AH = model.operator.H
        s = model.source_scale
        A_e = getattr(A_e, "matrix", A_e)
        self.A_e = A_e
        self.B = A_e / s[None, :] if s.ndim else A_e / complex(s)
        self.BH = np.ascontiguousarray(self.B.conj().T)
        self.D = np.asarray(data, dtype=complex)
        self.inv_s = (1.0 / s)[:, None] if s.ndim else 1.0 / complex(s)
        self.set_incident(incident)
        dn = np.sum(np.abs(self.D) ** 2, axis=0)
        self.eta_D = np.where(dn > 0, 1.0 / np.where(dn > 0, dn, 1.0), 1.0)
        self.penalties = penalties or []
        V = self.D.shape[1]
        if tau is None:
            tau = 0.0
        self.tau = np.broadcast_to(np.asarray(tau, dtype=float), (V,)).copy()

    def set_incident(self, incident):
        self.E = np.asarray(incident, dtype=complex)
        en = np.sum(np.abs(self.E) ** 2, axis=0)
        self.eta_S = np.where(en > 0, 1.0 / np.where(en > 0, en, 1.0), 1.0)

    def residuals(self, X, c, AX=None):
        AX = self.A @ X if AX is None else AX
        r = c[:, None] * (self.E + AX) - X
        rho = self.D - self.B @ X
        return r, rho

    def _pen_terms(self, X):
        out = np.zeros(X.shape[1])
        for v, pen in enumerate(self.penalties):
            if pen is not None and self.tau[v] > 0:
                out[v] = pen.value(X[:, v] * self.inv_s if np.ndim(self.inv_s) == 0
                                   else X[:, v] * self.inv_s[:, 0], self.tau[v])
        return out

    def penalty_raw(self, X) -> float:
        """Sum of the angular penalties with unit weights."""
        tot = 0.0
        for v, pen in enumerate(self.penalties):
            if pen is not None:
                tot += pen.value(self._W(X[:, v]))
        return tot

    def _W(self, x):
        return x * self.inv_s if np.ndim(self.inv_s) == 0 else x * self.inv_s[:, 0]

    def terms(self, X, c, AX=None) -> dict:
        r, rho = self.residuals(X, c, AX)
        return {"state": float(np.sum(self.eta_S * np.sum(np.abs(r) ** 2, axis=0))),
                "data": float(np.sum(self.eta_D * np.sum(np.abs(rho) ** 2, axis=0))),
                "penalty": float(self._pen_terms(X).sum())}

    def value(self, X, c, AX=None) -> float:
        t = self.terms(X, c, AX)
        return t["state"] + t["data"] + t["penalty"]

    def gradient(self, X, c, AX=None, parts=False):
        r, rho = self.residuals(X, c, AX)
        g_state = self.eta_S[None, :] * (self.AH @ (c.conj()[:, None] * r) - r)
        g_data = -self.eta_D[None, :] * (self.BH @ rho)
        g_pen = np.zeros_like(X)
        for v, pen in enumerate(self.penalties):
            if pen is not None and self.tau[v] > 0:
                gw = pen.gradient(self._W(X[:, v]), self.tau[v])
                g_pen[:, v] = gw * (np.conj(self.inv_s) if np.ndim(self.inv_s) == 0
                                    else np.conj(self.inv_s[:, 0]))
        if parts:
            return {"state": g_state, "data": g_data, "penalty": g_pen}
        return g_state + g_data + g_pen

    def curvature(self, d, c, Ad):
        """Coefficient of alpha^2 in Phi(X + alpha d)."""
        Ld = c[:, None] * Ad - d
        Bd = self.B @ d
        q = float(np.sum(self.eta_S * np.sum(np.abs(Ld) ** 2, axis=0))
                  + np.sum(self.eta_D * np.sum(np.abs(Bd) ** 2, axis=0)))
        return q + float(self._pen_terms(d).sum())

    def contrast_update(self, X, AX, subspace: FourierSubspace | None):
        """Least-squares contrast for fixed sources, optionally band-limited."""
        Et = self.E + AX
        w = np.sum(self.eta_S[None, :] * np.abs(Et) ** 2, axis=1)
        b = np.sum(self.eta_S[None, :] * X * Et.conj(), axis=1)
        if subspace is None:
            return np.divide(b, w, out=np.zeros_like(b), where=w > 0)
        return subspace.fit(w, b)


@dataclass
class InversionResult:
    chi_mod: ContrastMap
    chi: ContrastMap
    W: np.ndarray
    cost_history: np.ndarray
    iterations: int
    nmse: float | None = None
    nmse_mod: float | None = None
    clamped_cells: list = field(default_factory=list)
    model: str = ""
    tau: list = field(default_factory=list)
    stopped: str = ""
    wall_time: float = 0.0

    def write(self, out_dir, options: InversionOptions | None = None, extra: dict | None = None):
        """Write chi map CSV, cost history CSV and run metadata JSON."""
        from pathlib import Path
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "chi_map.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell", "chi_re", "chi_im", "mod_re", "mod_im"])
            for i, (a, b) in enumerate(zip(self.chi.values, self.chi_mod.values)):
                w.writerow([i, repr(float(a.real)), repr(float(a.imag)), repr(float(b.real)), repr(float(b.imag))])
        with open(out / "cost_history.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "cost"])
            for i, c in enumerate(self.cost_history):
                w.writerow([i, repr(float(c))])
        meta = {"model": self.model, "iterations": self.iterations, "nmse": self.nmse,
                "nmse_mod": self.nmse_mod, "clamped_cells": self.clamped_cells,
                "tau": self.tau, "stopped": self.stopped}
        if options is not None:
            meta["options"] = asdict(options)
        if extra:
            meta.update(extra)
        (out / "result.json").write_text(json.dumps(meta, indent=2, default=str))
        return out


def extract_chi(model: ModifiedModel, chi_mod: ContrastMap):
    """Map the model contrast back to chi, clamping near-singular cells.

    Cells whose inverse-map denominator is below CLAMP_TOL take the
    largest-magnitude chi among their finite neighbours.
    """
    grid = model.grid
    v = chi_mod.values
    if model.kind.uses_R:
        den = 1 - v
    elif model.kind.tag == "cseb":
        den = 1 + v * model.f_D
    else:
        return chi_mod, []
    bad = np.abs(den) < CLAMP_TOL
    safe = np.where(bad, 0.0, v)
    chi = model.to_chi(ContrastMap(safe, chi_mod.kind)).values.copy()
    cells = np.flatnonzero(bad)
    if cells.size:
        img_bad = grid.to_image(bad, fill=True)
        img = grid.to_image(chi)
        flat_to_active = np.full(grid.nx * grid.ny, -1)
        flat_to_active[grid.active] = np.arange(grid.n_cells)
        act_idx = np.flatnonzero(grid.active)
        for i in cells:
            iy, ix = divmod(act_idx[i], grid.nx)
            best = 0j
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    y, x = iy + dy, ix + dx
                    if (dy or dx) and 0 <= y < grid.ny and 0 <= x < grid.nx and not img_bad[y, x]:
                        if abs(img[y, x]) > abs(best):
                            best = img[y, x]
            chi[i] = best
        log.warning("clamped %d near-singular cells during chi extraction", cells.size)
    return ContrastMap(chi, "chi"), cells.tolist()


def _run(model: ModifiedModel, cost: CostFunctional, opts: InversionOptions, truth=None,
         fj0_source=None, X0=None) -> InversionResult:
    t0 = time.perf_counter()
    grid = model.grid
    subspace = FourierSubspace(grid, opts.n_arm) if opts.n_arm else None
    if X0 is None:
        W0 = backprop_init(cost.A_e, cost.D)
        X = model.to_mod_sources(W0)
    else:
        X = np.array(X0, dtype=complex)
    AX = cost.A @ X
    c = cost.contrast_update(X, AX, subspace)
    hist = [cost.value(X, c, AX)]

    if cost.penalties and opts.tau is None:
        raw = cost.penalty_raw(X)
        base = hist[0]
        cost.tau[:] = opts.tau_factor * base / raw if raw > 0 else 0.0
        hist[0] = cost.value(X, c, AX)
    g_prev = d_prev = None
    stopped = "max_iterations"
    it = 0
    for it in range(1, opts.max_iterations + 1):
        g = cost.gradient(X, c, AX)
        gg = float(np.vdot(g, g).real)
        if gg == 0:
            stopped = "zero_gradient"
            it -= 1
            break
        if d_prev is None:
            d = -g
        else:
            gamma = float(np.vdot(g, g - g_prev).real) / float(np.vdot(g_prev, g_prev).real)
            d = -g + max(gamma, 0.0) * d_prev
        Ad = cost.A @ d
        num = -float(np.vdot(g, d).real)
        if num <= 0:
            d, Ad = -g, cost.A @ -g
            num = gg
        den = cost.curvature(d, c, Ad)
        if den <= 0:
            stopped = "flat_direction"
            break
        alpha = num / den
        X = X + alpha * d
        AX = AX + alpha * Ad
        g_prev, d_prev = g, d
        c = cost.contrast_update(X, AX, subspace)
        if fj0_source is not None and opts.fj0_refresh and it % opts.fj0_refresh == 0:
            cost.set_incident(model.modified_incident(fj0_source, compute_F_J0(model.from_mod_sources(X), grid)))
            c = cost.contrast_update(X, AX, subspace)
        hist.append(cost.value(X, c, AX))
        if hist[-1] == 0.0:
            stopped = "zero_cost"
            break
        w = opts.stall_window
        if it >= w and hist[-1 - w] > 0 and (hist[-1 - w] - hist[-1]) / hist[-1 - w] < opts.stall_tol:
            stopped = "stalled"
            break
    chi_mod = ContrastMap(c, model.mod_kind)
    chi, clamped = extract_chi(model, chi_mod)
    res = InversionResult(chi_mod, chi, model.from_mod_sources(X), np.array(hist), it,
                          clamped_cells=clamped, model=model.kind.label(), tau=cost.tau.tolist(),
                          stopped=stopped)
    if truth is not None:
        res.nmse = nmse(truth, chi)
        try:
            res.nmse_mod = nmse(model.to_mod(truth), chi_mod)
        except Exception:
            res.nmse_mod = None
    res.wall_time = time.perf_counter() - t0
    return res


def csi_solve(model: ModifiedModel, data: MultistaticData, incident, opts: InversionOptions | None = None,
              truth: ContrastMap | None = None, f_j0=None) -> InversionResult:
    """Standard CSI on the rewriting ``model`` (H0-, CS-EB-, NIE-, Y0- or Y0-NIE-CSI).

    Y0 models start from the data-driven F_J0 estimate unless ``f_j0`` is
    given, and refresh it from the current sources every
    ``opts.fj0_refresh`` iterations (0 disables the refresh).
    """
    opts = opts or InversionOptions()
    grid = model.grid
    A_e = assemble_external(grid, data.probes)
    inc = np.asarray(incident, dtype=complex)
    fj0_source = None
    if model.kind.uses_y0:
        if f_j0 is None:
            f_j0 = estimate_F_J0_from_data(data, data.probes, grid, opts.fj0_harmonics)
        E_mod = model.modified_incident(inc, f_j0)
        fj0_source = inc
    else:
        E_mod = inc
    cost = CostFunctional(model, A_e, E_mod, data.values)
    return _run(model, cost, opts, truth, fj0_source)


def ve_csi_solve(model: ModifiedModel, ves, probes, opts: InversionOptions | None = None,
                 truth: ContrastMap | None = None, penalize: bool = True) -> InversionResult:
    """CSI on virtual experiments with the angular penalty around each pivot.

    ``model`` must be H0 or NIE.  With ``penalize=False`` or ``opts.tau = 0``
    the penalty vanishes and the plain VE-CSI cost is minimized.
    """
    opts = opts or InversionOptions()
    if model.kind.tag not in ("h0", "nie"):
        raise ConfigurationError("VE-CSI supports the H0 and NIE models only")
    if not ves:
        raise ConfigurationError("need at least one virtual experiment")
    grid = model.grid
    A_e = assemble_external(grid, probes)
    inc = np.column_stack([ve.incident for ve in ves])
    dat = np.column_stack([ve.scattered for ve in ves])
    radius = opts.neighborhood_radius or 0.25 * grid.wavelength
    penalties = None
    tau = None
    if penalize and (opts.tau is None or np.any(np.asarray(opts.tau) > 0)):
        penalties = [AngularPenalty(grid, ve.pivot, radius, opts.n_rings, opts.n_angles) for ve in ves]
        tau = opts.tau
    cost = CostFunctional(model, A_e, inc, dat, penalties, tau)
    run_opts = opts if penalties else InversionOptions(**{**asdict(opts), "tau": 0.0})
    return _run(model, cost, run_opts, truth)
