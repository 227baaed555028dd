"""Distance sweeps and the usable near-field distance for each layer count."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .config import SystemConfig
from .errors import ConfigurationError, FwhmError, NumericalError
from .field import ComplexField
from .geometry import build_aperture
from .metrics import (FocusReport, coherence, correction_factors, cuts_from_aperture,
                      diffraction_limits, fwhm, gain_loss_db, model_resolutions,
                      observation_grid, retention)
from .optimizer import OptimizerSettings, aperture_field, inject_imperfections, optimize_stack
from .wavefront import (curvature_diagnostics, fit_phase_polynomial, max_residual_phase,
                        rayleigh_distance, residual_phase, target_field, wrms)

CRITERIA = ("gain", "lateral", "axial", "phase")
FIT_ORDER = 4


@dataclass(frozen=True)
class Criterion:
    name: str
    attribute: str
    threshold: float
    upper: bool  # True: value must stay <= threshold

    def holds(self, value: float) -> bool:
        if not np.isfinite(value):
            return False
        return value <= self.threshold if self.upper else value >= self.threshold


def criteria_for(config: SystemConfig) -> dict[str, Criterion]:
    th = config.thresholds
    return {
        "gain": Criterion("gain", "gain_loss_db", th.gain_loss_db, True),
        "lateral": Criterion("lateral", "retention_lat", th.lateral_retention, False),
        "axial": Criterion("axial", "retention_ax", th.axial_retention, False),
        "phase": Criterion("phase", "max_residual_phase", th.residual_phase, True),
    }


@dataclass(frozen=True)
class Boundary:
    r: float
    violated: bool
    below_range: bool = False


def _width(cut) -> float:
    try:
        return fwhm(cut)
    except FwhmError:
        return math.nan


def evaluate_at(config: SystemConfig, L: int, r: float,
                settings: OptimizerSettings | None = None, engine: str = "green") -> FocusReport:
    """Optimize, perturb and measure one (L, r) design point."""
    cfg = config.with_layers(L)
    lam, D = cfg.wavelength, cfg.aperture_diameter
    r_ray = rayleigh_distance(D, lam)
    if not 0 < r <= r_ray * (1 + 1e-12):
        raise ConfigurationError(f"r = {r:g} m lies outside (0, R_Ray = {r_ray:g} m]")
    grid = build_aperture(cfg)
    stack, _ = optimize_stack(cfg, r, settings, engine, grid)
    stack = inject_imperfections(stack, cfg.imperfections, D)
    return measure_stack(cfg, stack, r, engine)


def measure_stack(cfg: SystemConfig, stack, r: float, engine: str = "green") -> FocusReport:
    """Every FocusReport field for a given (already perturbed) stack focusing at r."""
    lam, D, L = cfg.wavelength, cfg.aperture_diameter, stack.layer_count
    grid = stack.grid
    E = aperture_field(stack, cfg, engine)
    target = target_field(grid, r, lam)

    coh = coherence(E.values, np.conj(target.values))
    wave = E.conj()
    amp = np.abs(E.values)
    res = residual_phase(wave, target)
    wr = wrms(res, amp)
    notes = []
    try:
        diag = curvature_diagnostics(fit_phase_polynomial(wave, grid, FIT_ORDER), r, lam)
        dC, da4, R_eq = diag.delta_C, diag.delta_a4, diag.R_eq
    except NumericalError as exc:
        diag = None
        dC = da4 = R_eq = math.nan
        notes.append(str(exc))
    mrp = max_residual_phase(dC, D, lam) if diag else math.nan

    obs = observation_grid(cfg, r)
    cuts = cuts_from_aperture(E, obs, lam)
    bench = cuts_from_aperture(ComplexField(grid, np.conj(target.values)), obs, lam)
    w_lat, w_ax = _width(cuts["lateral"]), _width(cuts["axial"])
    b_lat, b_ax = _width(bench["lateral"]), _width(bench["axial"])
    dl = diffraction_limits(D, lam, r)
    ret_lat = retention(w_lat, b_lat) if np.isfinite(b_lat) else 0.0
    ret_ax = retention(w_ax, b_ax) if np.isfinite(b_ax) else 0.0

    factors = correction_factors(cfg.imperfections, cfg.calibration, L,
                                 cfg.nominal_spacing(), cfg.element_pitch)
    if diag is not None:
        m = model_resolutions(r, diag, wr, cfg.calibration, factors, D, lam, L)
        lat_corr, ax_corr, ax_high = m.model_lat_corr, m.model_ax_corr, m.model_ax_high
    else:
        lat_corr = ax_corr = ax_high = math.nan
    return FocusReport(
        r=float(r), coherence=coh, gain_loss_db=gain_loss_db(coh),
        fwhm_lat=w_lat, fwhm_ax=w_ax, dl_lat=dl.dl_lat, dl_ax=dl.dl_ax,
        retention_lat=ret_lat, retention_ax=ret_ax, wrms=wr, delta_C=dC, delta_a4=da4,
        max_residual_phase=mrp, mode_density=dl.mode_density,
        model_lat_corr=lat_corr, model_ax_corr=ax_corr,
        bench_lat=b_lat, bench_ax=b_ax, R_eq=R_eq, model_ax_high=ax_high,
        notes="; ".join(notes))


def criterion_boundary(reports: Sequence[FocusReport], criterion: Criterion) -> Boundary:
    """Largest r such that the criterion holds at every swept point up to r.

    The crossing is interpolated linearly in r on the monitored quantity. A
    non-finite violating value gives the last satisfying r.
    """
    if not reports:
        raise ConfigurationError("criterion_boundary needs at least one report")
    rs = [rep.r for rep in reports]
    vals = [getattr(rep, criterion.attribute) for rep in reports]
    for i, v in enumerate(vals):
        if criterion.holds(v):
            continue
        if i == 0:
            return Boundary(rs[0], True, below_range=True)
        a, b = vals[i - 1], v
        if not np.isfinite(b) or b == a:
            return Boundary(rs[i - 1], True)
        t = (criterion.threshold - a) / (b - a)
        return Boundary(rs[i - 1] + (rs[i] - rs[i - 1]) * min(max(t, 0.0), 1.0), True)
    return Boundary(rs[-1], False)


@dataclass
class UnfdReport:
    layer_count: int
    reports: list
    R_gain: float
    R_lat: float
    R_ax: float
    R_res: float
    R_phi: float
    R_unfd: float
    binding_criterion: str
    R_ray: float
    below_range: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"L": self.layer_count, "R_gain": self.R_gain, "R_res": self.R_res,
                "R_phi": self.R_phi, "R_unfd": self.R_unfd,
                "binding_criterion": self.binding_criterion, "R_ray": self.R_ray}


def assemble_report(config: SystemConfig, L: int, reports: list) -> UnfdReport:
    crit = criteria_for(config)
    b = {name: criterion_boundary(reports, c) for name, c in crit.items()}
    violated = [n for n in CRITERIA if b[n].violated]
    if violated:
        # ties resolve in the order gain, lateral, axial, phase
        binding = min(violated, key=lambda n: (b[n].r, CRITERIA.index(n)))
        r_unfd = b[binding].r
    else:
        binding = "none_violated"
        r_unfd = reports[-1].r
    return UnfdReport(
        layer_count=L, reports=reports, R_gain=b["gain"].r, R_lat=b["lateral"].r,
        R_ax=b["axial"].r, R_res=min(b["lateral"].r, b["axial"].r), R_phi=b["phase"].r,
        R_unfd=r_unfd, binding_criterion=binding,
        R_ray=rayleigh_distance(config.aperture_diameter, config.wavelength),
        below_range={n: b[n].below_range for n in CRITERIA})


def sweep_distances(config: SystemConfig) -> np.ndarray:
    plan = config.sweep
    r_ray = rayleigh_distance(config.aperture_diameter, config.wavelength)
    if plan.spacing == "linear":
        fr = np.linspace(plan.r_min_frac, plan.r_max_frac, plan.num_points)
    else:
        fr = np.geomspace(plan.r_min_frac, plan.r_max_frac, plan.num_points)
    fr[0], fr[-1] = plan.r_min_frac, plan.r_max_frac
    return r_ray * fr


def _init_worker():
    threadpool_limits(1)


def _evaluate_job(job):
    config, L, r, settings, engine = job
    return evaluate_at(config, L, r, settings, engine)


def resolve_threads(threads: int | str | None) -> int:
    if threads in (None, "", "auto"):
        env = os.environ.get("NEARFIELD_SIM_THREADS")
        threads = env if env else (os.cpu_count() or 1)
    try:
        n = int(threads)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"threads must be a positive integer or 'auto', got {threads!r}") from exc
    if n < 1:
        raise ConfigurationError("threads must be >= 1")
    return n


def run_jobs(jobs: list, threads: int = 1) -> list:
    """Evaluate (config, L, r, settings, engine) jobs; results keep job order."""
    if threads <= 1 or len(jobs) <= 1:
        with threadpool_limits(1):
            return [_evaluate_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker) as pool:
        return list(pool.map(_evaluate_job, jobs, chunksize=1))


def unfd_for_layers(config: SystemConfig, layer_counts: Sequence[int] | None = None,
                    threads: int = 1, settings: OptimizerSettings | None = None,
                    engine: str = "green") -> list[UnfdReport]:
    counts = list(layer_counts if layer_counts is not None else config.sweep.layer_counts)
    if not counts or any(int(L) < 1 for L in counts):
        raise ConfigurationError("layer counts must be positive integers")
    rs = sweep_distances(config)
    jobs = [(config, int(L), float(r), settings, engine) for L in counts for r in rs]
    results = run_jobs(jobs, threads)
    out = []
    for i, L in enumerate(counts):
        out.append(assemble_report(config, int(L), results[i * len(rs):(i + 1) * len(rs)]))
    return out
