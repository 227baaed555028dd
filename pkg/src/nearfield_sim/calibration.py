"""Calibration of the semi-empirical resolution coefficients.

Widths are compared as ratios to their ideal (benchmark) widths, and the
ratios are fitted with the product-form inflation models by weighted least
squares. Coefficients entering as a (1 + theta x) factor are solved in closed
form one at a time; the aperture-shrink coefficient and the exponents are
found by bounded scalar minimization. Sweeps repeat until the loss settles.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy import optimize

from .config import CalibrationCoefficients, ImperfectionParams, SystemConfig
from .errors import CalibrationError
from .wavefront import rayleigh_distance

COLUMNS = ("L", "r", "wavelength", "D", "pitch", "spacing", "misalignment",
           "transmission_efficiency", "phase_bits", "spacing_deviation",
           "fwhm_lat", "fwhm_ax", "ideal_lat", "ideal_ax", "wrms", "delta_C", "delta_a4",
           "R_eq", "weight_lat", "weight_ax")

MAIN = ("xi_lat", "chi_lat", "mu", "gamma_loss", "gamma_quant", "gamma_gap", "beta", "xi_ali", "nu")
FITTABLE = MAIN + ("xi_ax", "xi_ax2", "xi_ax4", "c_lat", "c_ax")
EXPONENT_RANGE = (0.5, 3.0)


@dataclass
class CalibrationDataset:
    columns: dict

    def __post_init__(self):
        n = None
        cols = {}
        for name in COLUMNS:
            if name not in self.columns:
                raise CalibrationError(f"dataset is missing column {name!r}")
            arr = np.asarray(self.columns[name], dtype=np.float64).reshape(-1)
            if n is not None and len(arr) != n:
                raise CalibrationError("dataset columns have different lengths")
            n = len(arr)
            cols[name] = arr
        if np.any(cols["weight_lat"] <= 0) or np.any(cols["weight_ax"] <= 0):
            raise CalibrationError("dataset weights must be > 0")
        self.columns = cols

    def __len__(self) -> int:
        return len(self.columns["L"])

    def __getitem__(self, name) -> np.ndarray:
        return self.columns[name]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for i in range(len(self)):
                w.writerow([repr(float(self.columns[c][i])) for c in COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "CalibrationDataset":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        if not rows:
            raise CalibrationError(f"{path}: empty dataset file")
        header, body = rows[0], rows[1:]
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise CalibrationError(f"{path}: missing columns {', '.join(missing)}")
        data = {c: [float(r[header.index(c)]) for r in body] for c in COLUMNS}
        return cls(data)


def generate_dataset(config: SystemConfig, grid_of_settings: dict, threads: int = 1,
                     settings=None) -> CalibrationDataset:
    """Evaluate every (imperfection, L, r) combination and collect width rows.

    ``grid_of_settings`` holds ``layer_counts``, either ``distances`` (m) or
    ``r_fracs`` (fractions of the Rayleigh distance), and optionally
    ``imperfections``, a list of ImperfectionParams keyword dicts.
    """
    from .unfd import run_jobs

    counts = list(grid_of_settings.get("layer_counts", ()))
    r_ray = rayleigh_distance(config.aperture_diameter, config.wavelength)
    if "distances" in grid_of_settings:
        rs = [float(r) for r in grid_of_settings["distances"]]
    else:
        rs = [float(f) * r_ray for f in grid_of_settings.get("r_fracs", ())]
    imps = [ImperfectionParams(**d) for d in grid_of_settings.get("imperfections", [{}])]
    combos = list(itertools.product(imps, counts, rs))
    if not combos:
        raise CalibrationError("empty settings grid: no dataset rows to generate")
    jobs = [(replace(config, imperfections=imp), int(L), r, settings, "green") for imp, L, r in combos]
    reports = run_jobs(jobs, threads)
    data = {c: [] for c in COLUMNS}
    for (imp, L, r), rep in zip(combos, reports):
        cfg = config.with_layers(int(L))
        vals = {
            "L": L, "r": r, "wavelength": cfg.wavelength, "D": cfg.aperture_diameter,
            "pitch": cfg.element_pitch, "spacing": cfg.nominal_spacing() or 0.0,
            "misalignment": imp.misalignment, "transmission_efficiency": imp.transmission_efficiency,
            "phase_bits": imp.phase_bits or 0, "spacing_deviation": imp.spacing_deviation,
            "fwhm_lat": rep.fwhm_lat, "fwhm_ax": rep.fwhm_ax,
            "ideal_lat": rep.bench_lat, "ideal_ax": rep.bench_ax,
            "wrms": rep.wrms, "delta_C": rep.delta_C, "delta_a4": rep.delta_a4, "R_eq": rep.R_eq,
            "weight_lat": 1.0 / rep.dl_lat, "weight_ax": 1.0 / rep.dl_ax,
        }
        for c in COLUMNS:
            data[c].append(vals[c])
    return CalibrationDataset(data)


class _Design:
    """Regressors derived once from a dataset."""

    def __init__(self, data: CalibrationDataset):
        g = data.columns
        self.L = g["L"]
        self.W = g["wrms"]
        self.rel = g["misalignment"] / g["pitch"]
        self.eta = g["transmission_efficiency"]
        bits = g["phase_bits"]
        self.dq2 = np.where(bits > 0, (2 * np.pi / 2.0 ** np.where(bits > 0, bits, 1)) ** 2, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.gap = np.where(g["spacing"] > 0, np.abs(g["spacing_deviation"] / g["spacing"]), 0.0)
        k0 = 2 * np.pi / g["wavelength"]
        self.curv = (g["delta_C"] * g["r"]) ** 2
        self.quart = (g["delta_a4"] * g["r"] ** 3 / k0) ** 2
        self.req2 = (g["R_eq"] / g["r"]) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            self.y_lat = g["fwhm_lat"] / g["ideal_lat"]
            self.y_ax = g["fwhm_ax"] / g["ideal_ax"]
        self.lat_ok = np.isfinite(self.y_lat) & np.isfinite(self.W)
        self.ax_ok = np.isfinite(self.y_ax) & np.isfinite(self.req2) & np.isfinite(self.curv)
        self.w_lat = g["weight_lat"]
        self.w_ax = g["weight_ax"]
        self.data = g

    def shift(self, exponent):
        return (self.L - 1) * np.where(self.rel > 0, self.rel, 0.0) ** exponent * (self.rel > 0)

    def common(self, th):
        return (self.eta ** (-(self.L - 1) / 2) * (1 + th["gamma_loss"] * (self.L - 1))
                * (1 + th["gamma_quant"] * self.L * self.dq2)
                * (1 + th["gamma_gap"] * self.L * self.gap))

    def lat_model(self, th):
        shrink = th["chi_lat"] * self.shift(th["mu"])
        return (1 + th["xi_lat"] * self.W) / (1 - shrink) * self.common(th)

    def ax_model(self, th):
        return (self.req2 * (1 + th["beta"] * self.curv)
                * (1 + th["xi_ali"] * self.shift(th["nu"])) * self.common(th))

    def loss(self, th):
        a = self.w_lat[self.lat_ok] * (self.y_lat - self.lat_model(th))[self.lat_ok] ** 2
        b = self.w_ax[self.ax_ok] * (self.y_ax - self.ax_model(th))[self.ax_ok] ** 2
        return float(np.sum(a) + np.sum(b))

    def regressor(self, name):
        """The data column a coefficient multiplies, and the rows it is judged on."""
        table = {
            "xi_lat": (self.W, self.lat_ok),
            "chi_lat": (self.shift(1.0), self.lat_ok), "mu": (self.shift(1.0), self.lat_ok),
            "gamma_loss": (self.L - 1, self.lat_ok | self.ax_ok),
            "gamma_quant": (self.L * self.dq2, self.lat_ok | self.ax_ok),
            "gamma_gap": (self.L * self.gap, self.lat_ok | self.ax_ok),
            "beta": (self.curv, self.ax_ok),
            "xi_ali": (self.shift(1.0), self.ax_ok), "nu": (self.shift(1.0), self.ax_ok),
            "xi_ax": (self.W ** 2, np.isfinite(self.y_ax) & np.isfinite(self.W)),
            "xi_ax2": (self.curv, np.isfinite(self.y_ax) & np.isfinite(self.curv)),
            "xi_ax4": (self.quart, np.isfinite(self.y_ax) & np.isfinite(self.quart)),
            "c_lat": (self.data["ideal_lat"], np.isfinite(self.data["ideal_lat"])),
            "c_ax": (self.data["ideal_ax"], np.isfinite(self.data["ideal_ax"])),
        }
        return table[name]


# coefficient -> (factor regressor, channels) for (1 + theta x) product factors
_LINEAR = {
    "xi_lat": ("W", ("lat",)),
    "gamma_loss": ("Lm1", ("lat", "ax")),
    "gamma_quant": ("quant", ("lat", "ax")),
    "gamma_gap": ("gap", ("lat", "ax")),
    "beta": ("curv", ("ax",)),
    "xi_ali": ("shift_nu", ("ax",)),
}


def _factor_x(d: _Design, key, th):
    return {"W": d.W, "Lm1": d.L - 1, "quant": d.L * d.dq2, "gap": d.L * d.gap,
            "curv": d.curv, "shift_nu": d.shift(th["nu"])}[key]


def _solve_linear(d: _Design, name, th):
    key, chans = _LINEAR[name]
    x = _factor_x(d, key, th)
    num = den = 0.0
    for ch in chans:
        ok = d.lat_ok if ch == "lat" else d.ax_ok
        w = d.w_lat if ch == "lat" else d.w_ax
        y = d.y_lat if ch == "lat" else d.y_ax
        th0 = dict(th, **{name: 0.0})
        P = d.lat_model(th0) if ch == "lat" else d.ax_model(th0)
        xp = (x * P)[ok]
        num += float(np.sum(w[ok] * xp * (y[ok] - P[ok])))
        den += float(np.sum(w[ok] * xp ** 2))
    return max(num / den, 0.0) if den > 0 else 0.0


def _solve_chi(d: _Design, th):
    s = d.shift(th["mu"])
    smax = float(np.max(s[d.lat_ok])) if np.any(d.lat_ok) else 0.0
    if smax <= 0:
        return 0.0
    res = optimize.minimize_scalar(lambda c: d.loss(dict(th, chi_lat=c)),
                                   bounds=(0.0, (1 - 1e-9) / smax), method="bounded",
                                   options={"xatol": 1e-14})
    return float(res.x)


def _solve_exponent(d: _Design, name, partner, th, fit_partner):
    def inner(e):
        t = dict(th, **{name: e})
        if fit_partner:
            t[partner] = _solve_chi(d, t) if partner == "chi_lat" else _solve_linear(d, partner, t)
        return d.loss(t), t

    res = optimize.minimize_scalar(lambda e: inner(e)[0], bounds=EXPONENT_RANGE, method="bounded",
                                   options={"xatol": 1e-10})
    return inner(float(res.x))[1]


def _solve_additive(y, w, X):
    """Weighted LS of (y - 1) on columns X, clipped at zero."""
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], (y - 1) * sw, rcond=None)
    return np.maximum(coef, 0.0)


@dataclass(frozen=True)
class FitResult:
    coefficients: CalibrationCoefficients
    residuals: dict
    sweeps: int


def fit_coefficients(data: CalibrationDataset, which, base: CalibrationCoefficients | None = None,
                     max_sweeps: int = 400, tol: float = 1e-15) -> FitResult:
    which = tuple(dict.fromkeys(which))
    base = base or CalibrationCoefficients()
    unknown = [w for w in which if w not in FITTABLE]
    if unknown:
        raise CalibrationError(f"cannot fit unknown coefficient(s): {', '.join(unknown)}")
    if not which:
        raise CalibrationError("no coefficients requested")
    if len(data) < 2 * len(which):
        raise CalibrationError(f"{len(data)} rows cannot identify {len(which)} coefficients "
                               f"(need at least {2 * len(which)})")
    d = _Design(data)
    for name in which:
        x, ok = d.regressor(name)
        if not np.any(ok) or not np.any(np.abs(x[ok]) > 0):
            raise CalibrationError(f"coefficient {name!r} is unidentifiable: its regressor is "
                                   f"identically zero in the data")

    th = {f.name: getattr(base, f.name) for f in fields(CalibrationCoefficients) if f.name != "eta_aper0"}
    for name in which:
        if name in ("mu", "nu"):
            th[name] = 1.0
        elif name not in ("c_lat", "c_ax"):
            th[name] = 0.0
    main = [w for w in which if w in MAIN]
    prev = d.loss(th)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1 if main else 1):
        for name in main:
            if name in _LINEAR:
                th[name] = _solve_linear(d, name, th)
            elif name == "chi_lat":
                th["chi_lat"] = _solve_chi(d, th)
            elif name == "mu":
                th = _solve_exponent(d, "mu", "chi_lat", th, "chi_lat" in which)
            elif name == "nu":
                th = _solve_exponent(d, "nu", "xi_ali", th, "xi_ali" in which)
        cur = d.loss(th)
        if abs(prev - cur) <= tol * max(prev, 1e-300) or cur == 0:
            break
        prev = cur

    residuals = {}
    lat_res = float(np.sqrt(np.mean((d.y_lat - d.lat_model(th))[d.lat_ok] ** 2))) if np.any(d.lat_ok) else 0.0
    ax_res = float(np.sqrt(np.mean((d.y_ax - d.ax_model(th))[d.ax_ok] ** 2))) if np.any(d.ax_ok) else 0.0
    for name in main:
        chans = _LINEAR[name][1] if name in _LINEAR else (("lat",) if name in ("chi_lat", "mu") else ("ax",))
        residuals[name] = max(lat_res if "lat" in chans else 0.0, ax_res if "ax" in chans else 0.0)

    if "xi_ax" in which:
        x, ok = d.regressor("xi_ax")
        th["xi_ax"] = float(_solve_additive(d.y_ax[ok], d.w_ax[ok], x[ok, None])[0])
        residuals["xi_ax"] = float(np.sqrt(np.mean((d.y_ax[ok] - 1 - th["xi_ax"] * x[ok]) ** 2)))
    high = [w for w in ("xi_ax2", "xi_ax4") if w in which]
    if high:
        ok = np.isfinite(d.y_ax) & np.isfinite(d.curv) & np.isfinite(d.quart)
        cols = {"xi_ax2": d.curv, "xi_ax4": d.quart}
        X = np.column_stack([cols[w][ok] for w in high])
        coef = _solve_additive(d.y_ax[ok], d.w_ax[ok], X)
        for w, c in zip(high, coef):
            th[w] = float(c)
        r = float(np.sqrt(np.mean((d.y_ax[ok] - 1 - X @ coef) ** 2)))
        residuals.update({w: r for w in high})
    g = d.data
    for name, u in (("c_lat", g["wavelength"] * g["r"] / g["D"]),
                    ("c_ax", g["wavelength"] * g["r"] ** 2 / g["D"] ** 2)):
        if name in which:
            ideal = g["ideal_lat" if name == "c_lat" else "ideal_ax"]
            w = g["weight_lat" if name == "c_lat" else "weight_ax"]
            ok = np.isfinite(ideal)
            th[name] = max(float(np.sum(w[ok] * u[ok] * ideal[ok]) / np.sum(w[ok] * u[ok] ** 2)), 0.0)
            residuals[name] = float(np.sqrt(np.mean((ideal[ok] / (th[name] * u[ok]) - 1) ** 2)))

    coeffs = replace(base, **{k: float(v) for k, v in th.items() if k in which})
    return FitResult(coeffs, residuals, sweeps)
