"""Layer-stack design by alternating per-layer phase alignment, plus the
hardware imperfections applied to a finished design."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage, optimize

from . import propagation as prop
from .config import ImperfectionParams, SystemConfig
from .errors import ConfigurationError, GridMismatchError, NumericalError
from .field import ComplexField
from .geometry import ApertureGrid, build_aperture, feed_field
from .wavefront import target_field


@dataclass(frozen=True, eq=False)
class LayerStack:
    """Per-layer amplitudes and phases on a shared lattice.

    The last layer sits at z = 0 on ``grid``; layer l sits ``sum(spacings[l:])``
    behind it. Amplitude and phase are stored separately so that export and
    import round-trip bit-exactly.
    """

    grid: ApertureGrid
    amplitudes: tuple
    phases: tuple
    spacings: tuple = ()

    def __post_init__(self):
        amps = tuple(np.array(a, dtype=np.float64).reshape(-1) for a in self.amplitudes)
        phs = tuple(np.array(p, dtype=np.float64).reshape(-1) for p in self.phases)
        spacings = tuple(float(d) for d in self.spacings)
        if len(amps) != len(phs) or not amps:
            raise ConfigurationError("a stack needs matching, non-empty amplitude and phase lists")
        if len(spacings) != len(amps) - 1:
            raise ConfigurationError(f"{len(amps)} layers need {len(amps) - 1} spacings")
        if any(d <= 0 for d in spacings):
            raise ConfigurationError("layer spacings must be > 0")
        for a, p in zip(amps, phs):
            if len(a) != self.grid.size or len(p) != self.grid.size:
                raise GridMismatchError("layer length does not match the aperture grid")
            if np.any(a < 0) or np.any(a > 1 + 1e-12):
                raise ConfigurationError("layer amplitudes must lie in [0, 1] (passive elements)")
            a.setflags(write=False)
            p.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "phases", phs)
        object.__setattr__(self, "spacings", spacings)
        z = np.concatenate([-np.cumsum(spacings[::-1])[::-1], [0.0]]) if spacings else np.zeros(1)
        object.__setattr__(self, "_grids", tuple(self.grid.at_z(float(zz)) for zz in z))

    @classmethod
    def from_coefficients(cls, grid, layers, spacings=()) -> "LayerStack":
        layers = [np.asarray(g, dtype=np.complex128) for g in layers]
        return cls(grid, tuple(np.abs(g) for g in layers), tuple(np.angle(g) for g in layers), spacings)

    @classmethod
    def zeros(cls, grid, layer_count: int, spacings=()) -> "LayerStack":
        one = np.ones(grid.size)
        return cls(grid, (one,) * layer_count, (np.zeros(grid.size),) * layer_count, spacings)

    @property
    def layer_count(self) -> int:
        return len(self.phases)

    @property
    def layers(self) -> list:
        return [a * np.exp(1j * p) for a, p in zip(self.amplitudes, self.phases)]

    def layer_grid(self, l: int) -> ApertureGrid:
        return self._grids[l]

    def with_phases(self, phases) -> "LayerStack":
        return LayerStack(self.grid, self.amplitudes, tuple(phases), self.spacings)


@dataclass(frozen=True)
class OptimizerSettings:
    max_sweeps: int = 60
    tol: float = 1e-10
    order: str = "forward_cyclic"
    refine: bool = True
    refine_steps: int = 300
    step_size: float = 1.0
    init: str = "zeros"
    seed: int = 0

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ConfigurationError("max_sweeps must be >= 1")
        if not self.tol > 0:
            raise ConfigurationError("tol must be > 0")
        if self.order != "forward_cyclic":
            raise ConfigurationError("only the forward_cyclic update order is supported")
        if self.init not in ("zeros", "random"):
            raise ConfigurationError("init must be 'zeros' or 'random'")


@dataclass
class OptimizationTrace:
    coherence: list = field(default_factory=list)
    gain_loss_db: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    termination: str = ""

    def record(self, eta: float, t0: float) -> None:
        self.coherence.append(eta)
        self.gain_loss_db.append(-20 * math.log10(eta) if eta > 0 else math.inf)
        self.wall_time.append(time.perf_counter() - t0)


class StackModel:
    """Forward and adjoint passes of a stack with fixed amplitudes.

    ``phases`` is a list of per-layer arrays; the model exposes the aperture
    output, the coherence against ``c`` and the coherence gradient.
    """

    def __init__(self, amplitudes, interlayer, feed_values, c):
        self.amps = [np.asarray(a) for a in amplitudes]
        self.G = list(interlayer)
        self.f0 = np.asarray(feed_values, dtype=np.complex128)
        self.c = np.asarray(c, dtype=np.complex128)
        self.c_norm = float(np.linalg.norm(self.c))
        self.L = len(self.amps)

    def forward(self, phases, start=0, x=None):
        """Inputs to each layer from ``start`` on, plus the aperture output."""
        x = self.f0 if x is None else x
        inputs = []
        for l in range(start, self.L):
            inputs.append(x)
            x = self.amps[l] * np.exp(1j * phases[l]) * x
            if l < self.L - 1:
                x = self.G[l].matvec(x)
        return inputs, x

    def coherence_of(self, E) -> float:
        n = np.linalg.norm(E)
        if n == 0:
            return 0.0
        return float(abs(np.vdot(self.c, E)) / (self.c_norm * n))

    def adjoints(self, phases, vec):
        """A_l^H vec for every layer, where A_l maps layer-l input to the output."""
        out = [None] * self.L
        y = vec
        for l in range(self.L - 1, -1, -1):
            y = np.conj(self.amps[l] * np.exp(1j * phases[l])) * y
            out[l] = y
            if l > 0:
                y = self.G[l - 1].rmatvec(y)
        return out

    def value_and_grad(self, phases):
        inputs, E = self.forward(phases)
        s = np.vdot(self.c, E)
        e2 = float(np.vdot(E, E).real)
        if abs(s) == 0 or e2 == 0:
            return 0.0, [np.zeros_like(p) for p in phases]
        vc = self.adjoints(phases, self.c)
        ve = self.adjoints(phases, E)
        grads = []
        for l in range(self.L):
            # d s / d phi_n = j conj(vc_n) x_n, x being the unmodulated layer input
            ds = 1j * np.conj(vc[l]) * inputs[l]
            de = 1j * np.conj(ve[l]) * inputs[l]
            g = np.real(np.conj(s) * ds) / abs(s) ** 2 - np.real(de) / e2
            grads.append(g)
        eta = abs(s) / (self.c_norm * math.sqrt(e2))
        return float(eta), grads


def system_feed(config: SystemConfig, grid: ApertureGrid) -> np.ndarray:
    return feed_field(config.feed, grid, config.wavelength).values


def _check_finite(x, layer, sweep):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite field at layer {layer + 1} during sweep {sweep}")


def optimize_stack(config: SystemConfig, r: float, settings: OptimizerSettings | None = None,
                   engine: str = "green", grid: ApertureGrid | None = None):
    """Phase-only stack maximizing aperture coherence with the focusing wavefront at r."""
    settings = settings or OptimizerSettings()
    if not r > 0:
        raise ConfigurationError("focal distance must be > 0")
    grid = grid or build_aperture(config)
    L = config.layer_count
    base = LayerStack.zeros(grid, L, config.layer_spacings)
    interlayer = prop.interlayer_propagators(base, config.wavelength, engine)
    c = np.conj(target_field(grid, r, config.wavelength).values)
    model = StackModel(base.amplitudes, interlayer, system_feed(config, grid), c)
    stack, trace = _optimize(model, base, settings)
    return stack, trace


def _optimize(model: StackModel, base: LayerStack, settings: OptimizerSettings):
    t0 = time.perf_counter()
    L = model.L
    n = base.grid.size
    if settings.init == "random":
        rng = np.random.default_rng(settings.seed)
        phases = [rng.uniform(-math.pi, math.pi, n) for _ in range(L)]
    else:
        phases = [np.zeros(n) for _ in range(L)]
    trace = OptimizationTrace()
    _, E = model.forward(phases)
    eta = model.coherence_of(E)
    trace.record(eta, t0)
    if n == 1:
        trace.termination = "single_element"
        return base.with_phases(phases), trace

    for sweep in range(1, settings.max_sweeps + 1):
        eta_start = eta
        back = model.adjoints(phases, model.c)
        x = model.f0
        for l in range(L):
            _check_finite(x, l, sweep)
            # back[l] carries conj(Gamma_l); add the current phase back to strip it
            proposal = np.angle(back[l]) + phases[l] - np.angle(x)
            if l == L - 1:
                phases[l] = proposal
            else:
                phases, eta = _accept(model, phases, l, proposal, x, eta)
            x = model.amps[l] * np.exp(1j * phases[l]) * x
            if l < L - 1:
                x = model.G[l].matvec(x)
        _check_finite(x, L - 1, sweep)
        eta = model.coherence_of(x)
        trace.record(eta, t0)
        if L == 1 or (eta - eta_start) <= settings.tol * max(eta_start, 1e-300):
            trace.termination = "converged"
            break
    else:
        trace.termination = "max_sweeps"

    if settings.refine and L > 1:
        phases, eta = _refine(model, phases, eta, settings)
        trace.record(eta, t0)
    return base.with_phases(phases), trace


def _accept(model, phases, l, proposal, x_in, eta):
    """Take the aligned phase for layer l, or a partial step, only if coherence does not drop."""
    old = phases[l]
    delta = np.angle(np.exp(1j * (proposal - old)))
    for t in (1.0, 0.5, 0.25, 0.125, 0.0625):
        trial = list(phases)
        trial[l] = old + t * delta
        _, E = model.forward(trial, start=l, x=x_in)
        e = model.coherence_of(E)
        if e >= eta:
            return trial, e
    return phases, eta


def _refine(model, phases, eta, settings):
    sizes = [len(p) for p in phases]
    splits = np.cumsum(sizes)[:-1]

    def fun(theta):
        ph = np.split(theta, splits)
        e, g = model.value_and_grad(ph)
        if e <= 0:
            return 1e300, np.zeros_like(theta)
        return -math.log(e), -np.concatenate(g)

    x0 = np.concatenate(phases)
    res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B",
                            options={"maxiter": settings.refine_steps, "gtol": 1e-12, "ftol": 1e-15})
    cand = np.split(res.x, splits)
    _, E = model.forward(cand)
    e = model.coherence_of(E)
    if e >= eta:
        return [np.angle(np.exp(1j * p)) for p in cand], e
    return phases, eta


def aperture_field(stack: LayerStack, config: SystemConfig, engine: str = "green") -> ComplexField:
    """Field leaving the last layer for the configured feed."""
    interlayer = prop.interlayer_propagators(stack, config.wavelength, engine)
    t_sim = prop.cascade(stack, interlayer)
    feed = ComplexField(stack.layer_grid(0), system_feed(config, stack.grid))
    return prop.apply(t_sim, feed)


def quantize_phases(stack: LayerStack, bits: int) -> LayerStack:
    """Round every phase to the nearest multiple of 2 pi / 2^bits (ties toward +), in [0, 2 pi)."""
    if not (isinstance(bits, (int, np.integer)) and bits >= 1):
        raise ConfigurationError("bits must be a positive integer")
    levels = 2 ** int(bits)
    step = 2 * math.pi / levels
    out = []
    for p in stack.phases:
        k = np.floor(p / step + 0.5).astype(np.int64) % levels
        out.append(k * step)
    return stack.with_phases(out)


def quantization_residual(phases, bits: int) -> np.ndarray:
    step = 2 * math.pi / 2 ** bits
    q = step * np.floor(np.asarray(phases) / step + 0.5)
    return np.asarray(phases) - q


def misalignment_shifts(layer_count: int, magnitude: float, seed: int) -> np.ndarray:
    """Seeded lateral shift vectors; layer 1 is the reference and never moves."""
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2 * math.pi, layer_count)
    shifts = magnitude * np.column_stack([np.cos(theta), np.sin(theta)])
    shifts[0] = 0.0
    return shifts


def shift_layer(grid: ApertureGrid, coefficients, shift) -> np.ndarray:
    """Coefficients seen on the nominal lattice when the layer moves rigidly by ``shift``.

    The designed profile is interpolated bilinearly on the lattice; cells
    outside the aperture take the value of the nearest active element.
    """
    m = grid.half_extent
    size = 2 * m + 1
    full = np.zeros((size, size), dtype=np.complex128)
    mask = np.zeros((size, size), dtype=bool)
    act = grid.active_indices
    full[act[:, 1] + m, act[:, 0] + m] = coefficients
    mask[act[:, 1] + m, act[:, 0] + m] = True
    _, (ri, ci) = ndimage.distance_transform_edt(~mask, return_indices=True)
    full = full[ri, ci]
    rows = act[:, 1] + m - shift[1] / grid.pitch
    cols = act[:, 0] + m - shift[0] / grid.pitch
    coords = np.vstack([rows, cols])
    re = ndimage.map_coordinates(full.real, coords, order=1, mode="nearest")
    im = ndimage.map_coordinates(full.imag, coords, order=1, mode="nearest")
    return re + 1j * im


def inject_imperfections(stack: LayerStack, params: ImperfectionParams,
                         aperture_diameter: float | None = None) -> LayerStack:
    """Apply misalignment, loss, spacing deviation and finally phase quantization."""
    if params.is_ideal:
        return stack
    L = stack.layer_count
    amps = list(stack.amplitudes)
    phases = list(stack.phases)
    if params.misalignment > 0 and L > 1:
        D = aperture_diameter if aperture_diameter is not None else 2 * float(np.max(stack.grid.rho))
        if params.misalignment >= D / 2:
            raise ConfigurationError(
                f"misalignment {params.misalignment:g} m moves layers off the aperture support")
        shifts = misalignment_shifts(L, params.misalignment, params.rng_seed)
        for l in range(1, L):
            g = shift_layer(stack.grid, amps[l] * np.exp(1j * phases[l]), shifts[l])
            amps[l] = np.minimum(np.abs(g), 1.0)
            phases[l] = np.angle(g)
    if params.transmission_efficiency != 1:
        s = math.sqrt(params.transmission_efficiency)
        amps = [a * s for a in amps]
    spacings = stack.spacings
    if params.spacing_deviation and spacings:
        if abs(params.spacing_deviation) >= min(spacings):
            raise ConfigurationError("spacing deviation would close a layer gap")
        spacings = tuple(d + params.spacing_deviation for d in spacings)
    out = LayerStack(stack.grid, tuple(amps), tuple(phases), spacings)
    if params.phase_bits is not None:
        out = quantize_phases(out, params.phase_bits)
    return out


def operator_mismatch(g_sim: prop.LinearPropagator, g_target: prop.LinearPropagator) -> float:
    """||G_sim - G_target||_F / ||G_target||_F."""
    if g_sim.shape != g_target.shape:
        raise GridMismatchError(f"operator shapes differ: {g_sim.shape} vs {g_target.shape}")
    a = g_sim.to_dense()
    b = g_target.to_dense()
    nb = np.linalg.norm(b)
    if nb == 0:
        raise NumericalError("target operator has zero norm")
    return float(np.linalg.norm(a - b) / nb)


def stack_to_dict(stack: LayerStack) -> dict:
    g = stack.grid
    hexs = lambda arr: [float(v).hex() for v in arr]
    return {
        "grid": {
            "pitch": float(g.pitch).hex(),
            "half_extent": g.half_extent,
            "active_mask": "".join("1" if v else "0" for v in g.active_mask),
        },
        "spacings": hexs(stack.spacings),
        "layers": [{"amp": hexs(a), "phase": hexs(p)}
                   for a, p in zip(stack.amplitudes, stack.phases)],
    }


def stack_from_dict(doc: dict) -> LayerStack:
    try:
        gd = doc["grid"]
        pitch = float.fromhex(gd["pitch"])
        m = int(gd["half_extent"])
        k = np.arange(-m, m + 1)
        iy, ix = np.meshgrid(k, k, indexing="ij")
        indices = np.column_stack([ix.ravel(), iy.ravel()])
        mask = np.array([ch == "1" for ch in gd["active_mask"]], dtype=bool)
        if len(mask) != len(indices):
            raise ConfigurationError("stack grid mask length does not match its lattice")
        grid = ApertureGrid(indices * pitch, indices, mask, pitch, 0.0)
        unhex = lambda xs: np.array([float.fromhex(v) for v in xs], dtype=np.float64)
        return LayerStack(grid, tuple(unhex(l["amp"]) for l in doc["layers"]),
                          tuple(unhex(l["phase"]) for l in doc["layers"]),
                          tuple(float.fromhex(v) for v in doc["spacings"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed stack document: {exc}") from exc


def save_stack(stack: LayerStack, path) -> None:
    Path(path).write_text(json.dumps(stack_to_dict(stack), indent=1) + "\n")


def load_stack(path) -> LayerStack:
    return stack_from_dict(json.loads(Path(path).read_text()))
