"""Command-line experiment runner.

Every subcommand takes a JSON configuration (``--config``) or a bundled
scenario name (``--scenario``), writes CSV/JSON artifacts to ``--out`` and
prints one summary line.  Lengths may be given in metres or as strings such
as ``"2 lambda"``.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import re
import sys
import time
import warnings
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from . import dnl
from .domain import BackgroundMedium, ContrastMap, ProbeRing, build_grid, load_raster_target, make_circle_target
from .errors import ConfigurationError, IngestionError
from .forward import MultistaticData, add_noise, incident_fields, mie_circular, synthesize
from .inversion import InversionOptions, csi_solve, ve_csi_solve
from .models import ModelKind, build_modified_model
from .scenarios import glyph_path
from .virtexp import design_ves, lsm_indicator, select_pivots, ve_to_csv

log = logging.getLogger("invscat")

FIG1_RADII = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0]
FIG1_BETAS = [0.5, 1.0, 2.0, 6.0]
FIG1_A = [0.3, 0.6, 0.9, 1.2]
FIG1_CHI = [0.5, 1.0, 1.9]

_GLYPH_SCENARIO = {
    "scenario": {
        "frequency": 300e6,
        "side": "2 lambda",
        "nx": 42, "ny": 42,
        "probes": {"radius": "3.75 lambda", "n_tx": 18, "n_rx": 18},
        "target": {"type": "raster", "path": "bundled:b_glyph.pgm", "chi": 1.9},
        "synthesis": {"nx": 63, "ny": 63},
    },
    "noise": {"snr_db": 30.0, "seed": 0},
    "inversion": {"n_arm": 13},
}

SCENARIOS = {
    "fig1": {"pipeline": "fig1", "sweep": {"cells_per_lambda": 12}},
    "b-glyph-y0nie": {**copy.deepcopy(_GLYPH_SCENARIO), "pipeline": "invert",
                      "model": {"model": "y0nie", "beta": 1.0}},
    "b-glyph-venie": {**copy.deepcopy(_GLYPH_SCENARIO), "pipeline": "ve-invert",
                      "model": {"model": "nie", "beta": 1.0},
                      "ve": {"n_pivots": 12, "min_separation": "0.25 lambda", "penalize": True}},
    "disc-mie-validation": {
        "pipeline": "forward",
        "scenario": {
            "frequency": 300e6, "side": "2 lambda", "nx": 42, "ny": 42,
            "probes": {"radius": "3.75 lambda", "n_tx": 18, "n_rx": 18},
            "target": {"type": "circle", "radius": "0.5 lambda", "chi": 1.0, "coverage": "area"},
        },
        "model": {"model": "h0"},
        "compare_mie": True,
    },
}

_LAMBDA = re.compile(r"^\s*([-+0-9.eE]+)\s*(lambda|λ)\s*$")


def resolve_length(value, wavelength: float, name: str) -> float:
    """Metres from a number or an ``"x lambda"`` string."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        m = _LAMBDA.match(value)
        if m:
            return float(m.group(1)) * wavelength
        try:
            return float(value)
        except ValueError:
            pass
    raise ConfigurationError(f"{name}: cannot read length {value!r}")


def _complex(value, name):
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    try:
        return complex(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{name}: not a number: {value!r}") from None


def _need(cfg, key, where):
    if key not in cfg:
        raise ConfigurationError(f"{where}.{key}: missing")
    return cfg[key]


def parse_model(cfg, wavelength) -> ModelKind:
    tag = str(_need(cfg, "model", "model")).lower()
    if tag == "cseb":
        return ModelKind.cseb(resolve_length(_need(cfg, "a", "model"), wavelength, "model.a"))
    if tag in ("nie", "y0nie"):
        return ModelKind(tag, beta=_complex(cfg.get("beta", 1.0), "model.beta"))
    return ModelKind(tag)


class Setup:
    """Objects built from the ``scenario`` block of a configuration."""

    def __init__(self, cfg: dict, base: Path | None = None):
        sc = _need(cfg, "scenario", "config")
        self.medium = BackgroundMedium(float(_need(sc, "frequency", "scenario")), float(sc.get("eps_r", 1.0)))
        lam = self.medium.wavelength
        self.side = resolve_length(_need(sc, "side", "scenario"), lam, "scenario.side")
        self.grid = build_grid(self.side, int(_need(sc, "nx", "scenario")), int(_need(sc, "ny", "scenario")),
                               self.medium)
        pr = _need(sc, "probes", "scenario")
        n_tx = int(_need(pr, "n_tx", "scenario.probes"))
        self.probes = ProbeRing.uniform(resolve_length(_need(pr, "radius", "scenario.probes"), lam,
                                                       "scenario.probes.radius"), n_tx, int(pr.get("n_rx", n_tx)))
        self.probes.check_outside(self.grid)
        self.target_cfg = sc.get("target", {"type": "circle", "radius": 0.0, "chi": 0.0})
        self.base = base
        syn = sc.get("synthesis")
        self.syn_grid = (build_grid(self.side, int(syn["nx"]), int(syn["ny"]), self.medium)
                         if syn else self.grid)

    def target(self, grid) -> ContrastMap:
        t = self.target_cfg
        kind = t.get("type", "circle")
        chi = _complex(t.get("chi", 0.0), "scenario.target.chi")
        lam = self.medium.wavelength
        if kind == "circle":
            r = resolve_length(t.get("radius", 0.0), lam, "scenario.target.radius")
            if r == 0 or chi == 0:
                return ContrastMap(np.zeros(grid.n_cells, complex))
            center = [resolve_length(c, lam, "scenario.target.center") for c in t.get("center", [0, 0])]
            return make_circle_target(r, chi, grid, center, coverage=t.get("coverage", "center"))
        if kind == "raster":
            path = str(_need(t, "path", "scenario.target"))
            if path.startswith("bundled:"):
                p = glyph_path().parent / path.split(":", 1)[1]
            else:
                p = Path(path)
                if not p.is_absolute() and self.base is not None:
                    p = self.base / p
            if not Path(str(p)).exists():
                raise ConfigurationError(f"scenario.target.path: file not found: {p}")
            return load_raster_target(p, chi, grid)
        raise ConfigurationError(f"scenario.target.type: unknown {kind!r}")


def _options(cfg) -> InversionOptions:
    raw = dict(cfg.get("inversion", {}))
    known = {f.name for f in fields(InversionOptions)}
    bad = set(raw) - known
    if bad:
        raise ConfigurationError(f"inversion.{sorted(bad)[0]}: unknown option")
    return InversionOptions(**raw)


def _measure(setup: Setup, cfg, seed):
    """Synthesize (possibly on a finer grid) and add noise."""
    truth_syn = setup.target(setup.syn_grid)
    model = build_modified_model(ModelKind.h0(), setup.syn_grid, setup.probes)
    clean, _ = synthesize(model, truth_syn, setup.probes)
    noise = cfg.get("noise", {})
    snr = float(noise.get("snr_db", float("inf")))
    data = clean if not np.any(clean.values) else add_noise(clean, snr, seed)
    return data, clean


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def run_forward(cfg, out: Path, seed, setup: Setup):
    kind = parse_model(cfg.get("model", {"model": "h0"}), setup.medium.wavelength)
    grid = setup.syn_grid
    chi = setup.target(grid)
    model = build_modified_model(kind, grid, setup.probes)
    data, _ = synthesize(model, chi, setup.probes)
    snr = float(cfg.get("noise", {}).get("snr_db", float("inf")))
    if np.any(data.values) and np.isfinite(snr):
        data = add_noise(data, snr, seed)
    data.to_csv(out / "data.csv")
    info = {"max_abs": float(np.abs(data.values).max())}
    if cfg.get("compare_mie"):
        t = setup.target_cfg
        r = resolve_length(t["radius"], setup.medium.wavelength, "scenario.target.radius")
        mie = mie_circular(r, _complex(t["chi"], "scenario.target.chi"), setup.probes, setup.medium)
        mie.to_csv(out / "mie.csv")
        err = np.linalg.norm(data.values - mie.values) / np.linalg.norm(mie.values)
        info["rms_vs_mie"] = float(err)
    return f"model={kind.label()} " + " ".join(f"{k}={v:.4g}" for k, v in info.items()), info


def run_norms(cfg, out: Path, seed, setup=None):
    sw = cfg.get("sweep", {})
    radii = sw.get("radii", FIG1_RADII)
    cpl = int(sw.get("cells_per_lambda", 12))
    medium = BackgroundMedium(float(cfg.get("frequency", 300e6)))
    kind = parse_model(cfg.get("model", {"model": "h0"}), medium.wavelength)
    curve = dnl.norm_curve(kind, radii, cpl, medium)
    ref = dnl.norm_curve(ModelKind.h0(), radii, cpl, medium)
    curve.to_csv(out / f"norms_{kind.tag}.csv")
    ref.to_csv(out / "norms_h0.csv")
    below = bool(np.all(curve.norms <= ref.norms))
    info = {"norm_min": float(curve.norms.min()), "norm_max": float(curve.norms.max()), "below_h0": below}
    return f"model={kind.label()} norms=[{curve.norms.min():.4g}, {curve.norms.max():.4g}]", info


def run_dnl(cfg, out: Path, seed, setup: Setup):
    chi = setup.target(setup.grid)
    lam = setup.medium.wavelength
    kinds = [parse_model(m, lam) for m in cfg.get("models", [{"model": t} for t in ("h0", "y0")]
                                              + [{"model": "nie", "beta": 1.0}, {"model": "y0nie", "beta": 1.0}])]
    report = []
    for k in kinds:
        v = dnl.feasibility_heuristic(k, chi, setup.grid)
        report.append({"model": k.label(), "bound": v.bound, "verdict": v.label})
    _write_json(out / "dnl_report.json", report)
    best = min(report, key=lambda r: r["bound"])
    return f"best={best['model']} bound={best['bound']:.4g}", {"report": report}


def run_invert(cfg, out: Path, seed, setup: Setup):
    kind = parse_model(cfg.get("model", {"model": "h0"}), setup.medium.wavelength)
    opts = _options(cfg)
    data, _ = _measure(setup, cfg, seed)
    data.to_csv(out / "data.csv")
    truth = setup.target(setup.grid)
    model = build_modified_model(kind, setup.grid, setup.probes)
    res = csi_solve(model, data, incident_fields(setup.grid, setup.probes), opts,
                    truth=truth if np.any(truth.values) else None)
    res.write(out, opts, {"seed": seed})
    return _result_summary(kind, res), {"nmse": res.nmse, "iterations": res.iterations}


def run_ve_invert(cfg, out: Path, seed, setup: Setup):
    kind = parse_model(cfg.get("model", {"model": "nie", "beta": 1.0}), setup.medium.wavelength)
    opts = _options(cfg)
    ve_cfg = cfg.get("ve", {})
    lam = setup.medium.wavelength
    data, _ = _measure(setup, cfg, seed)
    data.to_csv(out / "data.csv")
    grid = setup.grid
    ind = lsm_indicator(data, grid, ve_cfg.get("reg"))
    pivots = select_pivots(ind, grid, int(ve_cfg.get("n_pivots", 12)),
                           resolve_length(ve_cfg.get("min_separation", "0.25 lambda"), lam, "ve.min_separation"))
    ves = design_ves(data, pivots, grid, ve_cfg.get("reg"))
    ve_to_csv(ves, out / "ves.csv")
    truth = setup.target(grid)
    model = build_modified_model(kind, grid, setup.probes)
    res = ve_csi_solve(model, ves, setup.probes, opts, truth=truth if np.any(truth.values) else None,
                       penalize=bool(ve_cfg.get("penalize", True)))
    res.write(out, opts, {"seed": seed, "pivots": pivots.points.tolist()})
    return _result_summary(kind, res), {"nmse": res.nmse, "iterations": res.iterations}


def _result_summary(kind, res):
    nm = "n/a" if res.nmse is None else f"{res.nmse:.4f}"
    return f"model={kind.label()} nmse={nm} iterations={res.iterations}"


def emit_fig1_bundle(out_dir, cells_per_lambda: int = 12, radii=None, medium=None) -> list[Path]:
    """Six CSVs with the operator-norm and auxiliary-contrast curves."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    radii = FIG1_RADII if radii is None else radii
    medium = medium or dnl.default_medium()
    lam = medium.wavelength
    h0 = dnl.norm_curve(ModelKind.h0(), radii, cells_per_lambda, medium)

    def panel(name, curves):
        path = out / name
        dnl.write_curves([h0] + curves, path)
        return path

    files = [
        panel("fig1a_nie.csv", [dnl.norm_curve(ModelKind.nie(b), radii, cells_per_lambda, medium)
                                for b in FIG1_BETAS]),
        panel("fig1b_cseb.csv", [dnl.norm_curve(ModelKind.cseb(a * lam), radii, cells_per_lambda, medium)
                                 for a in FIG1_A]),
        panel("fig1c_y0.csv", [dnl.norm_curve(ModelKind.y0(), radii, cells_per_lambda, medium)]),
        panel("fig1d_y0nie.csv", [dnl.norm_curve(ModelKind.y0nie(b), radii, cells_per_lambda, medium)
                                  for b in FIG1_BETAS]),
    ]
    betas = np.round(np.linspace(0.1, 10.0, 100), 10)
    r_curves = [dnl.NormCurve("R", betas, dnl.r_norm_sweep(c, betas), f"chi={c:g}", "beta") for c in FIG1_CHI]
    dnl.write_curves(r_curves, out / "fig1e_R.csv")
    a_vals = np.round(np.linspace(0.1, 1.2, 111), 10)
    p_curves = [dnl.NormCurve("p", a_vals, dnl.p_norm_sweep(c, a_vals, 1.0, medium=medium).norms,
                              f"chi={c:g}", "a_over_lambda") for c in FIG1_CHI]
    dnl.write_curves(p_curves, out / "fig1f_p.csv")
    return files + [out / "fig1e_R.csv", out / "fig1f_p.csv"]


def run_fig1(cfg, out: Path, seed, setup=None):
    cpl = int(cfg.get("sweep", {}).get("cells_per_lambda", 12))
    files = emit_fig1_bundle(out, cpl)
    return f"files={len(files)}", {"files": [f.name for f in files]}


PIPELINES = {
    "forward": (run_forward, True),
    "norms": (run_norms, False),
    "dnl": (run_dnl, True),
    "invert": (run_invert, True),
    "ve-invert": (run_ve_invert, True),
    "fig1": (run_fig1, False),
}


def load_config(path=None, scenario=None) -> tuple[dict, Path | None]:
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"--config: file not found: {p}")
        try:
            return json.loads(p.read_text()), p.parent
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"--config: invalid JSON ({exc})") from None
    if scenario:
        if scenario not in SCENARIOS:
            raise ConfigurationError(f"--scenario: unknown {scenario!r}; choose from {sorted(SCENARIOS)}")
        return copy.deepcopy(SCENARIOS[scenario]), None
    return {}, None


def run(pipeline: str, cfg: dict, out, seed: int | None = None, base: Path | None = None) -> dict:
    """Execute one pipeline and write its artifacts plus ``run.json``."""
    if pipeline not in PIPELINES:
        raise ConfigurationError(f"pipeline: unknown {pipeline!r}")
    fn, needs_setup = PIPELINES[pipeline]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if seed is None:
        seed = int(cfg.get("noise", {}).get("seed", 0))
    t0 = time.perf_counter()
    setup = Setup(cfg, base) if needs_setup else None
    summary, info = fn(cfg, out, seed, setup)
    wall = time.perf_counter() - t0
    _write_json(out / "run.json", {"pipeline": pipeline, "seed": seed, "config": cfg, "result": info})
    line = f"{pipeline}: {summary} time={wall:.1f}s"
    print(line)
    return {"summary": line, **info}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="invscat", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in PIPELINES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--scenario", help=f"bundled scenario: {', '.join(SCENARIOS)}")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="noise seed (overrides the config)")
        p.add_argument("--threads", type=int, default=None, help="BLAS threads")
        p.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads
    if threads is not None:
        # OpenBLAS can crash when its pool grows past the size it started with
        started = max((i.get("num_threads", 1) for i in threadpool_info()), default=threads)
        if threads > started:
            log.warning("--threads %d exceeds the %d BLAS threads available at start-up; "
                        "set OPENBLAS_NUM_THREADS before launching to use more", threads, started)
            threads = started
    try:
        cfg, base = load_config(args.config, args.scenario)
        with threadpool_limits(limits=threads):
            with warnings.catch_warnings():
                if not args.verbose:
                    warnings.simplefilter("ignore", RuntimeWarning)
                run(args.command, cfg, args.out, args.seed, base)
    except (ConfigurationError, IngestionError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
