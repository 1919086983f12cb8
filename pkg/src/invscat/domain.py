"""Investigation domain, background medium, probes and targets.

Cell arrays are stored flat in row-major order over an ``(ny, nx)`` image
whose row index grows with ``y``.  A grid may carry a boolean mask; only
the active cells take part in the discretized operators.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import constants

from .errors import ConfigurationError, IngestionError

PIXEL_THRESHOLD = 0.5

CONTRAST_KINDS = ("chi", "p", "R")


@dataclass(frozen=True)
class BackgroundMedium:
    """Homogeneous lossless host medium."""

    frequency: float
    eps_r: complex = 1.0
    mu: float = constants.mu_0

    def __post_init__(self):
        if self.frequency <= 0:
            raise ConfigurationError("frequency must be positive")
        if complex(self.eps_r).imag != 0:
            raise ConfigurationError("only lossless backgrounds are supported (Im(eps_r) must be 0)")
        if complex(self.eps_r).real <= 0 or self.mu <= 0:
            raise ConfigurationError("eps_r and mu must be positive")

    @property
    def omega(self) -> float:
        return 2 * np.pi * self.frequency

    @property
    def k(self) -> float:
        return self.omega * math.sqrt(self.mu * constants.epsilon_0 * complex(self.eps_r).real)

    @property
    def wavelength(self) -> float:
        return 2 * np.pi / self.k


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform lattice of square cells centred on the origin."""

    side: float
    nx: int
    ny: int
    medium: BackgroundMedium
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != (self.ny, self.nx):
                raise ConfigurationError(f"mask shape {m.shape} != ({self.ny}, {self.nx})")
            m.setflags(write=False)
            object.__setattr__(self, "mask", m)

    @property
    def dx(self) -> float:
        return self.side / self.nx

    @property
    def dy(self) -> float:
        return self.side / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def a_cell(self) -> float:
        """Radius of the disc with the same area as one cell."""
        return math.sqrt(self.cell_area / math.pi)

    @property
    def k(self) -> float:
        return self.medium.k

    @property
    def wavelength(self) -> float:
        return self.medium.wavelength

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        x = -self.side / 2 + (np.arange(self.nx) + 0.5) * self.dx
        y = -self.side / 2 + (np.arange(self.ny) + 0.5) * self.dy
        return x, y

    @property
    def active(self) -> np.ndarray:
        """Flat boolean selector of active cells over the full lattice."""
        if self.mask is None:
            return np.ones(self.nx * self.ny, dtype=bool)
        return self.mask.ravel()

    @property
    def n_cells(self) -> int:
        return int(self.active.sum())

    @property
    def points(self) -> np.ndarray:
        """Active cell centres, shape ``(n_cells, 2)``."""
        x, y = self.axes()
        xx, yy = np.meshgrid(x, y)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        return pts[self.active]

    def to_image(self, values, fill=0.0) -> np.ndarray:
        """Scatter flat active-cell values back onto the ``(ny, nx)`` lattice."""
        values = np.asarray(values)
        img = np.full(self.nx * self.ny, fill, dtype=np.result_type(values, type(fill)))
        img[self.active] = values
        return img.reshape(self.ny, self.nx)

    def from_image(self, image) -> np.ndarray:
        image = np.asarray(image)
        if image.shape != (self.ny, self.nx):
            raise ConfigurationError(f"image shape {image.shape} != ({self.ny}, {self.nx})")
        return image.ravel()[self.active]

    @property
    def enclosing_radius(self) -> float:
        return self.side / math.sqrt(2)


@dataclass(frozen=True, eq=False)
class ContrastMap:
    """Per-cell contrast values tagged with their meaning.

    ``kind`` is ``"chi"`` for the physical contrast, ``"p"`` for the CS-EB
    auxiliary contrast and ``"R"`` for the NIE auxiliary contrast.
    """

    values: np.ndarray
    kind: str = "chi"

    def __post_init__(self):
        if self.kind not in CONTRAST_KINDS:
            raise ValueError(f"unknown contrast kind {self.kind!r}")
        v = np.array(self.values, dtype=complex).ravel()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def scaled(self, factor) -> "ContrastMap":
        return ContrastMap(self.values * factor, self.kind)

    def check_physical(self):
        if self.kind == "chi" and np.any(self.values.real < -1):
            raise ConfigurationError("physical contrast requires Re(chi) >= -1")
        return self


@dataclass(frozen=True, eq=False)
class ProbeRing:
    """Transmitters and receivers on a circle of radius ``radius``."""

    radius: float
    tx_angles: np.ndarray
    rx_angles: np.ndarray

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigurationError("probe radius must be positive")
        for name in ("tx_angles", "rx_angles"):
            a = np.array(getattr(self, name), dtype=float).ravel()
            if a.size == 0:
                raise ConfigurationError(f"{name} must not be empty")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def uniform(cls, radius: float, n_tx: int, n_rx: int | None = None) -> "ProbeRing":
        n_rx = n_tx if n_rx is None else n_rx
        return cls(radius,
                   2 * np.pi * np.arange(n_tx) / n_tx,
                   2 * np.pi * np.arange(n_rx) / n_rx)

    @property
    def n_tx(self) -> int:
        return self.tx_angles.size

    @property
    def n_rx(self) -> int:
        return self.rx_angles.size

    @property
    def tx_positions(self) -> np.ndarray:
        return self.radius * np.column_stack([np.cos(self.tx_angles), np.sin(self.tx_angles)])

    @property
    def rx_positions(self) -> np.ndarray:
        return self.radius * np.column_stack([np.cos(self.rx_angles), np.sin(self.rx_angles)])

    def check_outside(self, grid: Grid):
        if self.radius <= grid.enclosing_radius:
            raise ConfigurationError(
                f"probe ring radius {self.radius:g} m must exceed the domain "
                f"half-diagonal {grid.enclosing_radius:g} m")
        return self

    def to_json(self) -> str:
        return json.dumps({"radius": self.radius,
                           "tx_angles": self.tx_angles.tolist(),
                           "rx_angles": self.rx_angles.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "ProbeRing":
        d = json.loads(text)
        return cls(d["radius"], d["tx_angles"], d["rx_angles"])


def build_grid(side: float, nx: int, ny: int, medium: BackgroundMedium, mask=None) -> Grid:
    """Discretize a square domain of side ``side`` into ``nx`` x ``ny`` cells.

    Raises ConfigurationError if a cell is coarser than a tenth of the
    background wavelength.
    """
    if nx < 2 or ny < 2:
        raise ConfigurationError("grid needs at least 2 x 2 cells")
    if side <= 0:
        raise ConfigurationError("side must be positive")
    lam = medium.wavelength
    h = max(side / nx, side / ny)
    if h > lam / 10 * (1 + 1e-9):
        raise ConfigurationError(
            f"cell size {h:g} m exceeds lambda/10 = {lam / 10:g} m "
            f"(lambda/10 sampling rule); use at least {math.ceil(10 * side / lam)} cells per side")
    return Grid(float(side), int(nx), int(ny), medium, mask)


def disc_grid(radius: float, cell: float, medium: BackgroundMedium) -> Grid:
    """Lattice of pitch ``cell`` masked to the disc of ``radius`` at the origin.

    Cell centres sit at half-integer multiples of ``cell`` whatever the
    radius, so grids for increasing radii are nested.
    """
    n = 2 * max(1, math.ceil(radius / cell))
    grid = build_grid(n * cell, n, n, medium)
    x, y = grid.axes()
    xx, yy = np.meshgrid(x, y)
    mask = np.hypot(xx, yy) <= radius
    if not mask.any():
        raise ConfigurationError(f"no cell centre falls inside radius {radius:g} m; refine the lattice")
    return Grid(grid.side, n, n, medium, mask)


def probe_count_for(domain_radius: float, medium: BackgroundMedium) -> int:
    """Minimal non-redundant probe count, ceil(2 k r_D), at least 1."""
    if domain_radius <= 0:
        raise ConfigurationError("domain radius must be positive")
    return max(1, math.ceil(2 * medium.k * domain_radius - 1e-12))


def _read_pgm(path: Path) -> np.ndarray:
    tokens = []
    for line in path.read_text().splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P2":
        raise IngestionError(f"{path}: not a plain (P2) graymap")
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
        pix = np.array([float(t) for t in tokens[4:]])
    except ValueError as exc:
        raise IngestionError(f"{path}: malformed P2 header or pixels") from exc
    if pix.size != w * h:
        raise IngestionError(f"{path}: expected {w * h} pixels, found {pix.size}")
    if maxval <= 0:
        raise IngestionError(f"{path}: invalid maxval {maxval}")
    return pix.reshape(h, w)


def _read_csv_raster(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise IngestionError(f"{path}: empty raster")
    if len({len(r) for r in rows}) != 1:
        raise IngestionError(f"{path}: ragged rows")
    try:
        return np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise IngestionError(f"{path}: non-numeric entry") from exc


def read_raster(path) -> np.ndarray:
    """Read a P2 graymap or CSV raster; first row is the top of the image."""
    path = Path(path)
    try:
        if path.suffix.lower() in (".pgm", ".p2"):
            img = _read_pgm(path)
        else:
            img = _read_csv_raster(path)
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    if np.any(img < 0) or not np.all(np.isfinite(img)):
        raise IngestionError(f"{path}: pixel values must be finite and non-negative")
    return img


def resample_nearest(img: np.ndarray, ny: int, nx: int) -> np.ndarray:
    h, w = img.shape
    rows = np.minimum((np.arange(ny) + 0.5) * h / ny, h - 1).astype(int)
    cols = np.minimum((np.arange(nx) + 0.5) * w / nx, w - 1).astype(int)
    return img[np.ix_(rows, cols)]


def raster_to_contrast(img: np.ndarray, chi_value: complex, grid: Grid) -> ContrastMap:
    img = np.asarray(img, dtype=float)
    peak = img.max()
    norm = img / peak if peak > 0 else np.zeros_like(img)
    binary = (norm >= PIXEL_THRESHOLD).astype(float)
    # image rows run top to bottom, grid rows bottom to top
    lattice = np.flipud(resample_nearest(binary, grid.ny, grid.nx))
    if lattice.shape != (grid.ny, grid.nx):
        raise IngestionError("resampled raster does not match the grid")
    return ContrastMap(complex(chi_value) * grid.from_image(lattice), "chi")


def load_raster_target(path, chi_value: complex, grid: Grid) -> ContrastMap:
    """Homogeneous target whose support is the thresholded raster at ``path``."""
    return raster_to_contrast(read_raster(path), chi_value, grid)


def coverage_fraction(grid: Grid, radius: float, center=(0.0, 0.0), samples: int = 32) -> np.ndarray:
    """Fraction of each cell's area inside a disc, by ``samples``^2 midpoint sampling."""
    o = (np.arange(samples) + 0.5) / samples - 0.5
    sx, sy = np.meshgrid(o * grid.dx, o * grid.dy)
    pts = grid.points
    frac = np.empty(len(pts))
    for s in range(0, len(pts), 1024):
        x = pts[s:s + 1024, 0, None] + sx.ravel()[None] - center[0]
        y = pts[s:s + 1024, 1, None] + sy.ravel()[None] - center[1]
        frac[s:s + 1024] = (np.hypot(x, y) <= radius).mean(axis=1)
    return frac


def make_circle_target(radius: float, chi_value: complex, grid: Grid, center=(0.0, 0.0),
                       coverage: str = "center") -> ContrastMap:
    """Homogeneous disc target.

    With ``coverage="center"`` cells whose centre lies inside get
    ``chi_value``; with ``coverage="area"`` each cell gets ``chi_value``
    times the fraction of its area inside the disc, which removes most of
    the staircase error on coarse grids.
    """
    if radius <= 0 or radius > grid.side / 2 * (1 + 1e-12):
        raise ConfigurationError(f"disc radius {radius:g} m must be in (0, L/2 = {grid.side / 2:g} m]")
    if coverage == "area":
        return ContrastMap(complex(chi_value) * coverage_fraction(grid, radius, center), "chi")
    if coverage != "center":
        raise ConfigurationError(f"unknown coverage rule {coverage!r}")
    pts = grid.points
    inside = np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1]) <= radius
    return ContrastMap(np.where(inside, complex(chi_value), 0j), "chi")
