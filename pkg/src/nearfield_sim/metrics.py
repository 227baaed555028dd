"""Focal-quality metrics: coherence, gain loss, PSF cuts and widths, resolution
baselines, correction factors and the analytic resolution models."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import propagation as prop
from .config import CalibrationCoefficients, ImperfectionParams, SystemConfig
from .errors import ConfigurationError, FwhmError, GridMismatchError, NumericalError
from .field import ComplexField
from .geometry import ObservationGrid
from .wavefront import CurvatureDiagnostics, PhasePolynomial

LATERAL_HALF_WIDTHS = 4.0
AXIAL_HALF_WIDTHS = 4.0
SAMPLES_PER_WIDTH = 16
AXIAL_NEAR_CLIP = 0.55


def _values(x):
    return x.values if isinstance(x, ComplexField) else np.asarray(x, dtype=np.complex128)


def coherence(g_sim, g_target) -> float:
    """|<g_sim, g_target>| / (||g_sim|| ||g_target||)."""
    if isinstance(g_sim, ComplexField) and isinstance(g_target, ComplexField):
        if g_sim.grid.uid != g_target.grid.uid:
            raise GridMismatchError("coherence needs both fields on the same grid")
    a, b = _values(g_sim), _values(g_target)
    na2, nb2 = np.vdot(a, a).real, np.vdot(b, b).real
    if na2 == 0 or nb2 == 0:
        raise NumericalError("coherence of a zero-norm field is undefined")
    s = np.vdot(b, a)
    denom = math.sqrt(na2 * nb2)
    if not 0 < denom < math.inf:
        denom = math.sqrt(na2) * math.sqrt(nb2)
    # sqrt(x * x) == x exactly, so coherence(g, g) is exactly 1
    return float(min(1.0, abs(s) / denom))


def gain_loss_db(coh: float) -> float:
    if not 0 <= coh <= 1:
        raise ConfigurationError(f"coherence {coh!r} outside [0, 1]")
    if coh == 0:
        return math.inf
    return 0.0 - 20.0 * math.log10(coh)


@dataclass(frozen=True, eq=False)
class PsfCut:
    axis: str
    coordinates: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.coordinates, dtype=np.float64)
        i = np.asarray(self.intensity, dtype=np.float64)
        if self.axis not in ("lateral", "axial"):
            raise ConfigurationError("cut axis must be 'lateral' or 'axial'")
        if x.shape != i.shape or len(x) < 3:
            raise ConfigurationError("a cut needs matching coordinate and intensity arrays (>= 3 samples)")
        if np.any(np.diff(x) <= 0):
            raise ConfigurationError("cut coordinates must be strictly increasing")
        peak = i.max()
        if not peak > 0:
            raise NumericalError("cut has no positive intensity")
        object.__setattr__(self, "coordinates", x)
        object.__setattr__(self, "intensity", i / peak)


def fwhm(cut: PsfCut) -> float:
    """Separation of the half-maximum crossings nearest the peak (linear interpolation)."""
    x, y = cut.coordinates, cut.intensity
    k = int(np.argmax(y))
    if k == 0 or k == len(y) - 1:
        raise FwhmError(f"{cut.axis} peak lies on the window edge")
    left = np.flatnonzero(y[:k] < 0.5)
    right = np.flatnonzero(y[k + 1:] < 0.5)
    if len(left) == 0 or len(right) == 0:
        raise FwhmError(f"{cut.axis} cut has no half-maximum crossing on "
                        f"{'the left' if len(left) == 0 else 'the right'}")
    i = left[-1]
    j = k + 1 + right[0]
    xl = x[i] + (0.5 - y[i]) * (x[i + 1] - x[i]) / (y[i + 1] - y[i])
    xr = x[j - 1] + (0.5 - y[j - 1]) * (x[j] - x[j - 1]) / (y[j] - y[j - 1])
    return float(xr - xl)


@dataclass(frozen=True)
class DiffractionLimits:
    dl_lat: float
    dl_ax: float
    mode_density: float


def diffraction_limits(D_ap: float, wavelength: float, r: float,
                       c_lat: float = 0.886, c_ax: float = 2.0) -> DiffractionLimits:
    if not (D_ap > 0 and wavelength > 0 and r > 0):
        raise ConfigurationError("diffraction limits need positive D, wavelength and r")
    dl_ax = c_ax * wavelength * r ** 2 / D_ap ** 2
    return DiffractionLimits(c_lat * wavelength * r / D_ap, dl_ax, 1.0 / dl_ax)


def retention(measured: float, ideal: float) -> float:
    """ideal / measured; an unmeasurable width (NaN) retains nothing."""
    if not ideal > 0:
        raise ConfigurationError("ideal width must be > 0")
    if not np.isfinite(measured):
        return 0.0
    if not measured > 0:
        raise ConfigurationError("measured width must be > 0")
    return ideal / measured


def observation_grid(config: SystemConfig, r: float, half_widths: float = AXIAL_HALF_WIDTHS,
                     near_clip: float = AXIAL_NEAR_CLIP) -> ObservationGrid:
    """Lateral and axial cuts sized by the diffraction-limited widths at r.

    ``half_widths`` and ``near_clip`` widen the axial window for diagnostics.
    """
    dl = diffraction_limits(config.aperture_diameter, config.wavelength, r)
    lo = max(r - half_widths * dl.dl_ax, near_clip * r)
    return ObservationGrid.cuts(r, LATERAL_HALF_WIDTHS * dl.dl_lat, dl.dl_lat / SAMPLES_PER_WIDTH,
                                lo, r + half_widths * dl.dl_ax, dl.dl_ax / SAMPLES_PER_WIDTH)


def cuts_from_aperture(aperture: ComplexField, obs: ObservationGrid, wavelength: float) -> dict:
    """Peak-normalized intensity cuts radiated by a last-layer field."""
    h = prop.green_matrix(aperture.grid, obs, wavelength)
    e = h.matvec(aperture.values)
    if not np.all(np.isfinite(e)):
        raise NumericalError("non-finite field on the observation grid")
    inten = np.abs(e) ** 2
    n = obs.n_lateral
    return {"lateral": PsfCut("lateral", obs.lateral_x, inten[:n]),
            "axial": PsfCut("axial", obs.axial_z, inten[n:])}


def psf_cuts(stack, config: SystemConfig, r: float, engine: str = "green", obs=None) -> dict:
    """Lateral cut on the plane z = r and axial cut along boresight for ``stack``."""
    from .optimizer import aperture_field
    obs = obs if obs is not None else observation_grid(config, r)
    return cuts_from_aperture(aperture_field(stack, config, engine), obs, config.wavelength)


@dataclass(frozen=True)
class CorrectionFactors:
    F_ali_lat: float
    F_ali_ax: float
    F_loss: float
    F_quant: float
    F_gap: float
    F_lat: float
    F_ax: float
    eta_aper: float


def correction_factors(params: ImperfectionParams, coeffs: CalibrationCoefficients, L: int,
                       d: float | None, pitch: float) -> CorrectionFactors:
    if L < 1:
        raise ConfigurationError("layer count must be >= 1")
    rel = params.misalignment / pitch
    shrink = coeffs.chi_lat * (L - 1) * rel ** coeffs.mu if rel > 0 else 0.0
    if shrink >= 1:
        raise ConfigurationError(
            f"aperture collapse: chi_lat (L-1) (Delta/p)^mu = {shrink:g} >= 1")
    f_ali_lat = 1.0 / (1.0 - shrink)
    f_ali_ax = 1.0 + coeffs.xi_ali * (L - 1) * (rel ** coeffs.nu if rel > 0 else 0.0)
    eta = params.transmission_efficiency
    f_loss = eta ** (-(L - 1) / 2) * (1 + coeffs.gamma_loss * (L - 1))
    dq = 0.0 if params.phase_bits is None else 2 * math.pi / 2 ** params.phase_bits
    f_quant = 1 + coeffs.gamma_quant * L * dq ** 2
    gap = abs(params.spacing_deviation / d) if d else 0.0
    f_gap = 1 + coeffs.gamma_gap * L * gap
    common = f_loss * f_quant * f_gap
    return CorrectionFactors(f_ali_lat, f_ali_ax, f_loss, f_quant, f_gap,
                             f_ali_lat * common, f_ali_ax * common,
                             coeffs.aperture_utilization(L) * (1 - shrink))


@dataclass(frozen=True)
class ModelResolutions:
    model_lat: float
    model_ax: float
    model_lat_corr: float
    model_ax_corr: float
    model_ax_high: float
    model_ax_wrms: float


def model_resolutions(r: float, fit: PhasePolynomial | CurvatureDiagnostics, wrms: float,
                      coeffs: CalibrationCoefficients, factors: CorrectionFactors,
                      D: float, wavelength: float, L: int) -> ModelResolutions:
    """Analytic lateral and axial widths, inflated by phase error and hardware.

    ``fit`` may be a phase polynomial (diagnostics are derived from it) or
    precomputed curvature diagnostics.
    """
    from .wavefront import curvature_diagnostics
    diag = fit if isinstance(fit, CurvatureDiagnostics) else curvature_diagnostics(fit, r, wavelength)
    if not factors.eta_aper > 0:
        raise ConfigurationError("aperture collapse: non-positive aperture utilization")
    k0 = 2 * math.pi / wavelength
    # misalignment shrinkage enters once, through F_ali_lat in the corrected width
    d_eff = D * coeffs.aperture_utilization(L)
    lat = coeffs.c_lat * wavelength * r / d_eff * (1 + coeffs.xi_lat * wrms)
    ax = coeffs.c_ax * wavelength * diag.R_eq ** 2 / d_eff ** 2 * (1 + coeffs.beta * (diag.delta_C * r) ** 2)
    ideal_ax = coeffs.c_ax * wavelength * r ** 2 / D ** 2
    high = ideal_ax * (1 + coeffs.xi_ax2 * (diag.delta_C * r) ** 2
                       + coeffs.xi_ax4 * (diag.delta_a4 * r ** 3 / k0) ** 2)
    ax_wrms = ideal_ax * (1 + coeffs.xi_ax * wrms ** 2)
    return ModelResolutions(lat, ax, lat * factors.F_lat, ax * factors.F_ax, high, ax_wrms)


REPORT_COLUMNS = ("r", "coherence", "gain_loss_db", "fwhm_lat", "fwhm_ax", "dl_lat", "dl_ax",
                  "retention_lat", "retention_ax", "wrms", "delta_C", "delta_a4",
                  "max_residual_phase", "mode_density", "model_lat_corr", "model_ax_corr")


@dataclass(frozen=True)
class FocusReport:
    r: float
    coherence: float
    gain_loss_db: float
    fwhm_lat: float
    fwhm_ax: float
    dl_lat: float
    dl_ax: float
    retention_lat: float
    retention_ax: float
    wrms: float
    delta_C: float
    delta_a4: float
    max_residual_phase: float
    mode_density: float
    model_lat_corr: float
    model_ax_corr: float
    # not part of the CSV row
    bench_lat: float = math.nan
    bench_ax: float = math.nan
    R_eq: float = math.nan
    model_ax_high: float = math.nan
    notes: str = ""

    def row(self) -> list:
        return [getattr(self, c) for c in REPORT_COLUMNS]

    def to_dict(self) -> dict:
        return asdict(self)


def report_from_dict(d: dict) -> FocusReport:
    names = {f.name for f in fields(FocusReport)}
    return FocusReport(**{k: v for k, v in d.items() if k in names})
