"""Built-in property checks: closed-form distances, Green and Fresnel
operator identities, cascade oracles, operator dumps and quantization
statistics. Each check returns (passed, detail)."""

from __future__ import annotations

import decimal
import math
from decimal import Decimal
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import propagation as prop
from .errors import NearfieldError
from .field import ComplexField
from .geometry import ApertureGrid, PointGrid, aperture_grid
from .optimizer import LayerStack, quantization_residual
from .wavefront import classical_distances

WAVELENGTH = 0.010714


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rel(a, b) -> float:
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def square_grid(n: int, pitch: float, z: float = 0.0, offset: int | None = None) -> ApertureGrid:
    """Fully active n x n lattice; indices start at ``-n // 2`` unless given."""
    lo = -(n // 2) if offset is None else offset
    k = np.arange(lo, lo + n)
    iy, ix = np.meshgrid(k, k, indexing="ij")
    idx = np.column_stack([ix.ravel(), iy.ravel()])
    return ApertureGrid(idx * pitch, idx, np.ones(len(idx), dtype=bool), pitch, z)


def r_low_oracle(D: str, wavelength: str, phi_over_pi: str) -> float:
    """R_low from 60-digit decimal arithmetic, independent of the float path."""
    with decimal.localcontext() as ctx:
        ctx.prec = 60
        pi = Decimal("3.14159265358979323846264338327950288419716939937510582097494")
        Dd, lam = Decimal(D), Decimal(wavelength)
        phi = pi * Decimal(phi_over_pi)
        x = pi * Dd ** 4 / (Decimal(64) * lam * phi)
        return float(x ** (Decimal(1) / Decimal(3)))


def check_classical(tol: float):
    cd = classical_distances(0.3, WAVELENGTH, math.pi / 8)
    at_ray = float(cd.delta_Phi_max(cd.R_ray))
    oracle = r_low_oracle("0.3", str(WAVELENGTH), "0.125")
    low_err = abs(cd.R_low - oracle) / oracle
    inv = abs(float(cd.delta_Phi_trunc(cd.R_low)) - cd.phi) / cd.phi
    ok = (at_ray == math.pi / 8 and low_err <= 1e-12 * tol and inv <= 1e-12 * tol
          and abs(cd.R_ray - 2 * 0.09 / WAVELENGTH) <= 1e-12 * tol * cd.R_ray)
    return ok, (f"dPhi(R_ray)={at_ray!r} R_ray={cd.R_ray:.4f} R_low={cd.R_low:.6f} "
                f"(oracle {oracle:.6f}) inverse err={inv:.1e}")


def fresnel_impulse_error(d: float, wavelength: float = WAVELENGTH) -> float:
    """Max relative error of a propagated unit impulse against the closed form, rho <= 0.2 d."""
    pitch = wavelength / 2
    m = int(math.ceil(0.2 * d / pitch))
    g = aperture_grid(2 * m * pitch * (1 + 1e-9), pitch)
    src = square_grid(1, pitch, offset=0)
    out = prop.fresnel_propagate(ComplexField(src, [1.0]), d, wavelength, dst=g.at_z(d))
    rho2 = g.rho ** 2
    k0 = 2 * math.pi / wavelength
    ref = prop.fresnel_prefactor(d, wavelength) * np.exp(-1j * k0 * rho2 / (2 * d)) * pitch ** 2
    keep = np.sqrt(rho2) <= 0.2 * d
    return float(np.max(np.abs(out.values[keep] - ref[keep]) / np.abs(ref[keep])))


def check_fresnel_impulse(tol: float):
    errs = {d: fresnel_impulse_error(d) for d in (0.25, 0.5, 1.0)}
    worst = max(errs.values())
    return worst <= 1e-9 * tol, "max rel err " + ", ".join(f"d={d}: {e:.2e}" for d, e in errs.items())


def fresnel_transfer_error(d: float = 0.5, wavelength: float = WAVELENGTH, M: int = 128) -> float:
    """DFT of the sampled kernel against the transfer function on the central half of the bins.

    Sampling at dx = sqrt(lambda d / M) makes the sampled chirp's DFT equal the
    sampled transfer function.
    """
    dx = math.sqrt(wavelength * d / M)
    grid = square_grid(M, dx)
    impulse = square_grid(1, dx, offset=0)
    h = prop.fresnel_operator(impulse, grid.at_z(d), d, wavelength).matvec(np.ones(1, complex)) / dx ** 2
    h2 = h.reshape(M, M)  # rows y, columns x, both from -M/2
    H_num = np.fft.fft2(np.fft.ifftshift(h2)) * dx ** 2
    f = np.fft.fftfreq(M, dx)
    FY, FX = np.meshgrid(f, f, indexing="ij")
    H_ref = prop.fresnel_transfer(FX, FY, d, wavelength)
    inner = (np.abs(FX) < 0.25 / dx) & (np.abs(FY) < 0.25 / dx)
    return float(np.max(np.abs(H_num[inner] - H_ref[inner]) / np.abs(H_ref[inner])))


def check_fresnel_transfer(tol: float):
    err = fresnel_transfer_error()
    unit = float(np.max(np.abs(np.abs(prop.fresnel_transfer(
        np.linspace(-500, 500, 101), np.linspace(-300, 300, 101), 0.7, WAVELENGTH)) - 1)))
    return err <= 1e-6 * tol and unit <= 1e-15, f"max rel err {err:.2e}; max | |H| - 1 | = {unit:.1e}"


def random_geometry(n: int, rng, z_src=0.0, z_dst=0.05):
    src = PointGrid(np.column_stack([rng.uniform(-0.05, 0.05, (n, 2)), np.full(n, z_src)]))
    dst = PointGrid(np.column_stack([rng.uniform(-0.05, 0.05, (n, 2)), np.full(n, z_dst)]))
    return src, dst


def check_green(tol: float):
    rng = np.random.default_rng(7)
    src, dst = random_geometry(64, rng)
    a = prop.green_matrix(src, dst, WAVELENGTH, force="explicit")
    b = prop.green_matrix(src, dst, WAVELENGTH, force="matrix_free")
    x = rng.normal(size=64) + 1j * rng.normal(size=64)
    e1 = _rel(b.matvec(x), a.matvec(x))
    e2 = _rel(b.rmatvec(x), a.rmatvec(x))
    back = prop.green_matrix(dst, src, WAVELENGTH, force="explicit")
    recip = bool(np.array_equal(a.matrix, back.matrix.T))
    return max(e1, e2) <= 1e-12 * tol and recip, \
        f"explicit vs matrix-free {max(e1, e2):.2e}; reciprocity exact={recip}"


def cascade_error(rng, n_side: int, L: int) -> float:
    grid = square_grid(n_side, WAVELENGTH / 2)
    spacings = tuple(rng.uniform(2, 6, L - 1) * WAVELENGTH)
    amps = tuple(rng.uniform(0.3, 1.0, grid.size) for _ in range(L))
    phs = tuple(rng.uniform(-math.pi, math.pi, grid.size) for _ in range(L))
    stack = LayerStack(grid, amps, phs, spacings)
    inter = prop.interlayer_propagators(stack, WAVELENGTH)
    t = prop.cascade(stack, inter)
    dense = np.diag(stack.layers[0])
    for l in range(1, L):
        dense = np.diag(stack.layers[l]) @ inter[l - 1].matrix @ dense
    x = rng.normal(size=grid.size) + 1j * rng.normal(size=grid.size)
    y = prop.apply(t, ComplexField(stack.layer_grid(0), x)).values
    return _rel(y, dense @ x)


def check_cascade(tol: float):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        worst = max(worst, cascade_error(rng, int(rng.integers(2, 9)), int(rng.integers(1, 5))))
    return worst <= 1e-12 * tol, f"worst rel err over 20 seeds {worst:.2e}"


def reference_operator() -> prop.LinearPropagator:
    g = square_grid(6, WAVELENGTH / 2)
    return prop.green_matrix(g, g.at_z(5 * WAVELENGTH), WAVELENGTH)


def check_dump(tol: float, dump_path: str | Path | None, workdir: Path | None):
    op = reference_operator()
    if dump_path is None:
        path = Path(workdir or ".") / "reference_operator.bin"
        prop.dump_operator(op, path)
    else:
        path = Path(dump_path)
    try:
        m = prop.load_operator_matrix(path)
    except NearfieldError as exc:
        return False, str(exc)
    if m.shape != op.matrix.shape:
        return False, f"dump shape {m.shape} != reference {op.matrix.shape}"
    err = _rel(m, op.matrix)
    return err <= 1e-15 * tol, f"{path.name}: rel err {err:.2e}"


def check_quantization(tol: float):
    rng = np.random.default_rng(3)
    phases = rng.uniform(-math.pi, math.pi, 4000)
    worst = 0.0
    parts = []
    for b in (1, 2, 3, 4):
        step = 2 * math.pi / 2 ** b
        res = quantization_residual(phases, b)
        ratio = float(np.sqrt(np.mean(res ** 2))) / (step / math.sqrt(12))
        worst = max(worst, abs(ratio - 1))
        parts.append(f"b={b}: {ratio:.4f}")
        if np.max(np.abs(res)) > step / 2 + 1e-15:
            return False, f"b={b}: residual exceeds half a step"
    return worst <= 0.15 * tol, "WRMS / (step/sqrt 12): " + ", ".join(parts)


CHECKS: dict[str, Callable] = {
    "classical_distances": check_classical,
    "green_oracle": check_green,
    "fresnel_impulse": check_fresnel_impulse,
    "fresnel_transfer": check_fresnel_transfer,
    "cascade_oracle": check_cascade,
    "quantization_statistics": check_quantization,
}


def run_checks(tolerance_scale: float = 1.0, dump_path=None, workdir=None) -> list[CheckResult]:
    out = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn(tolerance_scale)
        except NearfieldError as exc:
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail))
    ok, detail = check_dump(tolerance_scale, dump_path, workdir)
    out.append(CheckResult("operator_dump", bool(ok), detail))
    return out
