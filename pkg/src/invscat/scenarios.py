"""Bundled synthetic scenarios."""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .domain import BackgroundMedium, ContrastMap, Grid, ProbeRing, build_grid, load_raster_target
from .forward import MultistaticData, add_noise, incident_fields, synthesize
from .models import ModelKind, build_modified_model


def glyph_path():
    return resources.files("invscat") / "data" / "b_glyph.pgm"


@dataclass(frozen=True, eq=False)
class Scenario:
    grid: Grid
    probes: ProbeRing
    data: MultistaticData
    truth: ContrastMap
    incident: np.ndarray
    clean: MultistaticData


def glyph_scenario(chi=1.9, side_lambda=2.0, n_inv=42, n_syn=63, n_probes=18, ring_lambda=3.75,
                   snr_db=30.0, seed=0, frequency=300e6, raster=None) -> Scenario:
    """Glyph target synthesized on a fine grid and observed with noise.

    The data come from an exact H0 solve on ``n_syn`` x ``n_syn`` cells;
    the returned grid, truth and incident fields live on the coarser
    ``n_inv`` x ``n_inv`` inversion grid.
    """
    med = BackgroundMedium(frequency)
    lam = med.wavelength
    side = side_lambda * lam
    probes = ProbeRing.uniform(ring_lambda * lam, n_probes)
    path = raster or glyph_path()
    fine = build_grid(side, n_syn, n_syn, med)
    model = build_modified_model(ModelKind.h0(), fine, probes)
    clean, _ = synthesize(model, load_raster_target(path, chi, fine), probes)
    data = add_noise(clean, snr_db, seed)
    grid = build_grid(side, n_inv, n_inv, med)
    return Scenario(grid, probes, data, load_raster_target(path, chi, grid),
                    incident_fields(grid, probes), clean)
