"""Focusing wavefronts and their phase-polynomial fits.

Also holds the classical near-field distance formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError
from .field import ComplexField, require_same_grid


@dataclass(frozen=True)
class PhasePolynomial:
    """Even radial phase polynomial: phase(rho) ~ sum a_{2m} rho^{2m}.

    ``coefficients`` maps the order 2m to a_{2m} in rad/m^{2m}. The constant
    term of the fit is not stored.
    """

    coefficients: dict = field(default_factory=dict)
    fit_residual_rms: float = 0.0
    valid_radius: float = 0.0

    def __post_init__(self):
        if any(k % 2 or k < 2 for k in self.coefficients):
            raise ConfigurationError("phase polynomial orders must be even and >= 2")
        if not self.fit_residual_rms >= 0:
            raise ConfigurationError("fit_residual_rms must be >= 0")

    def coefficient(self, order: int) -> float:
        return self.coefficients.get(order, 0.0)

    def __call__(self, rho):
        rho2 = np.asarray(rho, dtype=np.float64) ** 2
        return sum(a * rho2 ** (k // 2) for k, a in sorted(self.coefficients.items()))


def _k0(wavelength: float) -> float:
    return 2 * math.pi / wavelength


def target_field(grid, r: float, wavelength: float) -> ComplexField:
    """Unit-power field with phase -k0 (sqrt(rho^2 + r^2) - r)."""
    if not r > 0:
        raise ConfigurationError("focal distance r must be > 0")
    rho = grid.rho
    # sqrt(rho^2 + r^2) - r written without cancellation
    path = rho ** 2 / (np.sqrt(rho ** 2 + r ** 2) + r)
    values = np.exp(-1j * _k0(wavelength) * path) / math.sqrt(grid.size)
    return ComplexField(grid, values)


def ideal_phase_coefficients(r: float, wavelength: float, max_order: int = 4) -> PhasePolynomial:
    if max_order not in (2, 4, 6):
        raise ConfigurationError("max_order must be 2, 4 or 6")
    k0 = _k0(wavelength)
    full = {2: -k0 / (2 * r), 4: k0 / (8 * r ** 3), 6: -k0 / (16 * r ** 5)}
    return PhasePolynomial({k: v for k, v in full.items() if k <= max_order})


def polynomial_field(grid, coefficients: dict, amplitude=None) -> ComplexField:
    """Synthesize exp(j sum a_{2m} rho^{2m}) on ``grid``."""
    phase = PhasePolynomial(dict(coefficients))(grid.rho)
    amp = np.ones(grid.size) if amplitude is None else np.asarray(amplitude, dtype=np.float64)
    return ComplexField(grid, amp * np.exp(1j * phase))


def residual_phase(actual: ComplexField, ideal: ComplexField) -> np.ndarray:
    """Wrapped, piston-free phase of ``actual`` relative to ``ideal``.

    Elements where either field vanishes are returned as NaN (excluded).
    """
    require_same_grid(actual.grid, ideal.grid, "residual_phase")
    d = actual.values * np.conj(ideal.values)
    mag = np.abs(d)
    ok = mag > 0
    if not np.any(ok):
        return np.full(len(d), np.nan)
    # amplitude-weighted circular mean of the difference phase
    piston = np.angle(np.sum(d[ok]))
    out = np.full(len(d), np.nan)
    out[ok] = np.angle(d[ok] * np.exp(-1j * piston))
    return out


def wrms(residual, amplitude) -> float:
    """sqrt(sum A^2 dphi^2 / sum A^2) over included (finite) elements."""
    res = np.asarray(residual, dtype=np.float64)
    w = np.asarray(amplitude, dtype=np.float64) ** 2
    ok = np.isfinite(res) & (w > 0)
    if not np.any(ok):
        raise NumericalError("WRMS undefined: every element is excluded or has zero amplitude")
    return float(math.sqrt(np.sum(w[ok] * res[ok] ** 2) / np.sum(w[ok])))


def _ring_keys(grid) -> np.ndarray:
    idx = getattr(grid, "active_indices", None)
    if idx is not None:
        return (idx[:, 0].astype(np.int64) ** 2 + idx[:, 1].astype(np.int64) ** 2)
    return np.round(grid.rho ** 2 / np.max(grid.rho ** 2) * 1e9).astype(np.int64)


def fit_phase_polynomial(fld: ComplexField, grid=None, max_order: int = 4) -> PhasePolynomial:
    """Amplitude^2-weighted least-squares fit of the radial phase profile.

    Each ring of equal radius is averaged as a complex phasor, the ring phases
    are unwrapped outward from the center, and [1, rho^2, ..., rho^max_order]
    is fitted. Residual RMS is the weighted per-element residual.
    """
    grid = fld.grid if grid is None else grid
    if fld.grid.uid != grid.uid:
        require_same_grid(fld.grid, grid, "fit_phase_polynomial")
    if max_order not in (2, 4, 6, 8):
        raise ConfigurationError("max_order must be an even order in 2..8")
    values = fld.values
    amp2 = np.abs(values) ** 2
    ok = amp2 > amp2.max() * 1e-24 if amp2.max() > 0 else amp2 > 0
    keys = _ring_keys(grid)
    rho = grid.rho
    ring_ids, inverse = np.unique(keys, return_inverse=True)
    w_ring = np.bincount(inverse, weights=amp2 * ok, minlength=len(ring_ids))
    used = w_ring > 0
    n_terms = max_order // 2 + 1
    if np.count_nonzero(used) < n_terms:
        raise NumericalError(
            f"phase fit of order {max_order} needs {n_terms} distinct radii, "
            f"found {np.count_nonzero(used)}")

    phasor = np.where(ok, values / np.where(ok, np.abs(values), 1.0), 0.0)
    ring_sum = np.bincount(inverse, weights=(phasor * amp2).real, minlength=len(ring_ids)) \
        + 1j * np.bincount(inverse, weights=(phasor * amp2).imag, minlength=len(ring_ids))
    ring_rho = np.zeros(len(ring_ids))
    np.maximum.at(ring_rho, inverse, rho)
    ring_rho, ring_sum, w = ring_rho[used], ring_sum[used], w_ring[used]
    # piston relative to the innermost ring, then radial unwrap
    ring_phase = np.unwrap(np.angle(ring_sum * np.conj(ring_sum[0])))

    scale = ring_rho.max() if ring_rho.max() > 0 else 1.0
    s2 = (ring_rho / scale) ** 2
    design = np.column_stack([s2 ** m for m in range(n_terms)])
    sw = np.sqrt(w / w.sum())
    coef, *_ = np.linalg.lstsq(design * sw[:, None], ring_phase * sw, rcond=None)
    if np.linalg.matrix_rank(design * sw[:, None]) < n_terms:
        raise NumericalError("phase fit design matrix is rank deficient")
    coeffs = {2 * m: float(coef[m] / scale ** (2 * m)) for m in range(1, n_terms)}

    model = coef[0] + np.column_stack([(rho / scale) ** (2 * m) for m in range(1, n_terms)]) @ coef[1:]
    ref = np.angle(ring_sum[0])
    resid = np.angle(np.exp(1j * (np.angle(values) - ref - model)))
    rms = float(math.sqrt(np.sum(amp2[ok] * resid[ok] ** 2) / np.sum(amp2[ok])))
    return PhasePolynomial(coeffs, rms, float(ring_rho.max()))


@dataclass(frozen=True)
class CurvatureDiagnostics:
    R_eq: float
    delta_C: float
    delta_a4: float


def curvature_diagnostics(fit: PhasePolynomial, r: float, wavelength: float) -> CurvatureDiagnostics:
    if 2 not in fit.coefficients:
        raise ConfigurationError("curvature diagnostics need a quadratic coefficient")
    a2 = fit.coefficients[2]
    if not a2 < 0:
        raise NumericalError(f"diverging wavefront: quadratic coefficient {a2:g} >= 0")
    k0 = _k0(wavelength)
    R_eq = -k0 / (2 * a2)
    return CurvatureDiagnostics(R_eq, 1 / R_eq - 1 / r, abs(fit.coefficient(4) - k0 / (8 * r ** 3)))


def max_residual_phase(delta_C: float, D: float, wavelength: float) -> float:
    return math.pi * D ** 2 / (4 * wavelength) * abs(delta_C)


@dataclass(frozen=True)
class ClassicalDistances:
    D: float
    wavelength: float
    phi: float
    R_ray: float
    R_low: float

    def delta_L_max(self, r):
        return self.D ** 2 / (8 * np.asarray(r))

    def delta_Phi_max(self, r):
        # (pi/4)(D^2/lambda)/r keeps delta_Phi_max(R_ray) == pi/8 bit-exact
        return math.pi / 4 * ((self.D ** 2 / self.wavelength) / np.asarray(r))

    def delta_Phi_trunc(self, r):
        return math.pi * self.D ** 4 / (64 * self.wavelength * np.asarray(r) ** 3)


def classical_distances(D: float, wavelength: float, phi: float = math.pi / 8) -> ClassicalDistances:
    if not (D > 0 and wavelength > 0 and phi > 0):
        raise ConfigurationError("classical distances need positive D, wavelength and phi")
    q = D ** 2 / wavelength
    R_low = (math.pi * D ** 4 / (64 * wavelength * phi)) ** (1 / 3)
    return ClassicalDistances(D, wavelength, phi, 2 * q, R_low)


def rayleigh_distance(D: float, wavelength: float) -> float:
    return 2 * (D ** 2 / wavelength)


def effective_distance(path_length: float, layer_phases, rx_phase: float, wavelength: float) -> float:
    if not path_length > 0:
        raise ConfigurationError("path_length must be > 0")
    return path_length + (float(np.sum(layer_phases)) + rx_phase) / _k0(wavelength)
