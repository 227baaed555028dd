import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nearfield_sim import propagation as prop
from nearfield_sim.config import ImperfectionParams, default_config
from nearfield_sim.errors import ConfigurationError, GridMismatchError
from nearfield_sim.geometry import build_aperture
from nearfield_sim.optimizer import (LayerStack, OptimizerSettings, StackModel, aperture_field,
                                     inject_imperfections, load_stack, misalignment_shifts,
                                     operator_mismatch, optimize_stack, quantization_residual,
                                     quantize_phases, save_stack, shift_layer, system_feed)
from nearfield_sim.metrics import coherence
from nearfield_sim.validate import square_grid
from nearfield_sim.wavefront import target_field

from conftest import WAVELENGTH, rel_err, uniform_feed

K0 = 2 * math.pi / WAVELENGTH


def small(L, **kw):
    return default_config(aperture_diameter=0.06, layer_count=L, **kw)


def test_single_layer_plane_feed_is_conjugate_phase():
    cfg = small(1, feed=uniform_feed())
    r = 0.3
    stack, trace = optimize_stack(cfg, r)
    rho = stack.grid.rho
    conj_phase = K0 * rho ** 2 / (np.sqrt(rho ** 2 + r ** 2) + r)
    diff = np.angle(np.exp(1j * (stack.phases[0] - conj_phase)))
    assert np.ptp(diff) < 1e-6
    assert trace.coherence[-1] >= 0.999
    assert np.all(stack.amplitudes[0] == 1)


def test_single_element_any_phase():
    cfg = default_config(aperture_diameter=WAVELENGTH / 2, layer_count=1)
    stack, trace = optimize_stack(cfg, 0.2)
    assert stack.grid.size == 1
    assert trace.coherence[-1] == pytest.approx(1.0, abs=1e-15)


def test_two_layers_no_worse_than_one():
    r = 0.15
    _, t1 = optimize_stack(small(1), r)
    _, t2 = optimize_stack(small(2), r)
    assert t2.coherence[-1] >= t1.coherence[-1] - 1e-9


def test_trace_monotone():
    _, trace = optimize_stack(small(3), 0.12, OptimizerSettings(max_sweeps=15))
    steps = np.diff(trace.coherence)
    assert np.all(steps >= -1e-9)
    assert trace.termination in ("converged", "max_sweeps")
    assert len(trace.gain_loss_db) == len(trace.coherence) == len(trace.wall_time)


def test_random_init_is_seeded():
    s = OptimizerSettings(max_sweeps=3, refine=False, init="random", seed=5)
    a, _ = optimize_stack(small(2), 0.2, s)
    b, _ = optimize_stack(small(2), 0.2, s)
    assert all(np.array_equal(x, y) for x, y in zip(a.phases, b.phases))


def test_settings_validation():
    with pytest.raises(ConfigurationError):
        OptimizerSettings(max_sweeps=0)
    with pytest.raises(ConfigurationError):
        OptimizerSettings(tol=0)
    with pytest.raises(ConfigurationError):
        OptimizerSettings(order="reverse")


def test_zero_phase_layer_embeds_shorter_stack(rng):
    grid = square_grid(5, WAVELENGTH / 2)
    n = grid.size
    d = 3 * WAVELENGTH
    three = LayerStack.zeros(grid, 3, (d, d))
    g = prop.interlayer_propagators(three, WAVELENGTH)
    merged = prop.compose([g[0], g[1]])
    feed = np.exp(1j * rng.uniform(-3, 3, n))
    c = rng.normal(size=n) + 1j * rng.normal(size=n)
    p1, p3 = rng.uniform(-3, 3, n), rng.uniform(-3, 3, n)
    ones = np.ones(n)
    m3 = StackModel([ones] * 3, g, feed, c)
    m2 = StackModel([ones] * 2, [merged], feed, c)
    e3 = m3.coherence_of(m3.forward([p1, np.zeros(n), p3])[1])
    e2 = m2.coherence_of(m2.forward([p1, p3])[1])
    assert abs(e3 - e2) <= 1e-12


def test_gradient_matches_finite_differences(rng):
    grid = square_grid(4, WAVELENGTH / 2)
    n = grid.size
    stack = LayerStack.zeros(grid, 2, (2 * WAVELENGTH,))
    g = prop.interlayer_propagators(stack, WAVELENGTH)
    amps = [rng.uniform(0.5, 1, n) for _ in range(2)]
    model = StackModel(amps, g, rng.normal(size=n) + 1j * rng.normal(size=n),
                       rng.normal(size=n) + 1j * rng.normal(size=n))
    phases = [rng.uniform(-3, 3, n) for _ in range(2)]
    eta, grads = model.value_and_grad(phases)
    h = 1e-6
    for l in range(2):
        for k in (0, 7, 15):
            up = [p.copy() for p in phases]
            dn = [p.copy() for p in phases]
            up[l][k] += h
            dn[l][k] -= h
            fd = (math.log(model.value_and_grad(up)[0]) - math.log(model.value_and_grad(dn)[0])) / (2 * h)
            assert grads[l][k] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_aperture_field_matches_model():
    cfg = small(2)
    stack, trace = optimize_stack(cfg, 0.2)
    E = aperture_field(stack, cfg)
    c = target_field(stack.grid, 0.2, cfg.wavelength)
    # coherence against the focusing target: the wavefront is conj(E)
    assert coherence(c.values, np.conj(E.values)) == pytest.approx(trace.coherence[-1], abs=1e-12)


# quantization

def one_layer(phases):
    phases = np.asarray(phases, dtype=float)
    grid = square_grid(int(round(math.sqrt(len(phases)))), 0.005)
    return LayerStack(grid, (np.ones(grid.size),), (phases,))


def test_quantize_binary():
    q = quantize_phases(one_layer(np.linspace(-3, 3, 16)), 1)
    assert set(np.round(q.phases[0], 15)) <= {0.0, round(math.pi, 15)}


def test_quantize_example():
    q = quantize_phases(one_layer([0.3]), 3)
    assert q.phases[0][0] == 0.0
    q = quantize_phases(one_layer([0.4]), 3)
    assert q.phases[0][0] == pytest.approx(math.pi / 4, rel=1e-15)


def test_quantize_tie_goes_up():
    q = quantize_phases(one_layer([math.pi / 8]), 3)
    assert q.phases[0][0] == pytest.approx(math.pi / 4, rel=1e-15)


def test_quantize_keeps_amplitude(rng):
    grid = square_grid(3, 0.005)
    s = LayerStack(grid, (rng.uniform(0, 1, 9),), (rng.uniform(-3, 3, 9),))
    assert np.array_equal(quantize_phases(s, 2).amplitudes[0], s.amplitudes[0])


def test_quantize_fine_limit(rng):
    p = rng.uniform(-math.pi, math.pi, 400)
    q = quantize_phases(one_layer(p), 20)
    err = np.angle(np.exp(1j * (q.phases[0] - p)))
    assert np.max(np.abs(err)) <= math.pi / 2 ** 20 * (1 + 1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 31))
def test_quantization_residual_statistics(bits, seed):
    p = np.random.default_rng(seed).uniform(-math.pi, math.pi, 2000)
    step = 2 * math.pi / 2 ** bits
    res = quantization_residual(p, bits)
    assert np.max(np.abs(res)) <= step / 2 + 1e-15
    assert math.sqrt(np.mean(res ** 2)) == pytest.approx(step / math.sqrt(12), rel=0.15)


def test_quantize_rejects_bad_bits():
    with pytest.raises(ConfigurationError):
        quantize_phases(one_layer([0.1]), 0)


# imperfections

def designed_stack(L=3):
    cfg = small(L)
    return optimize_stack(cfg, 0.2, OptimizerSettings(max_sweeps=4, refine=False))[0]


def test_ideal_params_are_noop():
    s = designed_stack()
    assert inject_imperfections(s, ImperfectionParams()) is s


def test_loss_per_layer():
    s = designed_stack()
    out = inject_imperfections(s, ImperfectionParams(transmission_efficiency=0.9))
    total = np.prod([a[0] for a in out.amplitudes])
    assert total == pytest.approx(0.9 ** 1.5, rel=1e-14)
    assert total == pytest.approx(0.8538, abs=1e-4)


def test_spacing_deviation():
    s = designed_stack()
    out = inject_imperfections(s, ImperfectionParams(spacing_deviation=0.002))
    assert out.spacings == tuple(d + 0.002 for d in s.spacings)
    with pytest.raises(ConfigurationError):
        inject_imperfections(s, ImperfectionParams(spacing_deviation=1.0))


def test_injection_deterministic():
    s = designed_stack()
    p = ImperfectionParams(misalignment=0.004, transmission_efficiency=0.8, phase_bits=2, rng_seed=9)
    a, b = inject_imperfections(s, p), inject_imperfections(s, p)
    for x, y in zip(a.phases + a.amplitudes, b.phases + b.amplitudes):
        assert np.array_equal(x, y)
    c = inject_imperfections(s, dataclasses.replace(p, rng_seed=10))
    assert not all(np.array_equal(x, y) for x, y in zip(a.phases, c.phases))


def test_misalignment_keeps_first_layer():
    s = designed_stack()
    out = inject_imperfections(s, ImperfectionParams(misalignment=0.006, rng_seed=3))
    assert np.array_equal(out.phases[0], s.phases[0])
    assert not np.array_equal(out.phases[1], s.phases[1])
    shifts = misalignment_shifts(3, 0.006, 3)
    assert np.all(shifts[0] == 0)
    assert np.allclose(np.hypot(shifts[1:, 0], shifts[1:, 1]), 0.006, rtol=1e-15)


def test_misalignment_off_support():
    with pytest.raises(ConfigurationError):
        inject_imperfections(designed_stack(), ImperfectionParams(misalignment=0.05))


def test_whole_pitch_shift_moves_profile():
    grid = build_aperture(small(1))
    coeffs = np.exp(1j * np.arange(grid.size) * 0.01)
    out = shift_layer(grid, coeffs, np.array([grid.pitch, 0.0]))
    idx = grid.active_indices
    lookup = {tuple(k): i for i, k in enumerate(idx)}
    for i, (ix, iy) in enumerate(idx):
        src = lookup.get((ix - 1, iy))
        if src is not None:
            assert out[i] == pytest.approx(coeffs[src], abs=1e-12)


def test_imperfections_lower_coherence():
    cfg = small(2)
    stack, trace = optimize_stack(cfg, 0.2)
    bad = inject_imperfections(stack, ImperfectionParams(phase_bits=1))
    E = aperture_field(bad, cfg)
    c = target_field(stack.grid, 0.2, cfg.wavelength)
    assert coherence(c.values, np.conj(E.values)) < trace.coherence[-1]


# operator mismatch

def test_operator_mismatch_examples(rng):
    grid = square_grid(3, 0.005)
    m = rng.normal(size=(9, 9)) + 1j * rng.normal(size=(9, 9))
    a = prop.explicit(grid, grid, m)
    assert operator_mismatch(a, a) == 0.0
    assert operator_mismatch(prop.explicit(grid, grid, 2 * m), a) == pytest.approx(1.0, rel=1e-15)
    g8 = square_grid(8, 0.005)
    x = rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64))
    y = rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64))
    oracle = math.sqrt(np.sum(np.abs(x - y) ** 2) / np.sum(np.abs(y) ** 2))
    assert operator_mismatch(prop.explicit(g8, g8, x), prop.explicit(g8, g8, y)) == pytest.approx(oracle, rel=1e-12)
    with pytest.raises(GridMismatchError):
        operator_mismatch(a, prop.explicit(g8, g8, x))


# persistence

def test_stack_json_round_trip(tmp_path):
    s = inject_imperfections(designed_stack(),
                             ImperfectionParams(misalignment=0.002, transmission_efficiency=0.7))
    save_stack(s, tmp_path / "s.json")
    t = load_stack(tmp_path / "s.json")
    assert t.spacings == s.spacings
    assert np.array_equal(t.grid.active_mask, s.grid.active_mask)
    assert t.grid.pitch == s.grid.pitch
    for x, y in zip(t.amplitudes + t.phases, s.amplitudes + s.phases):
        assert np.array_equal(x, y)


def test_stack_json_malformed(tmp_path):
    (tmp_path / "bad.json").write_text('{"grid": {}}')
    with pytest.raises(ConfigurationError):
        load_stack(tmp_path / "bad.json")


def test_stack_rejects_active_gain():
    grid = square_grid(2, 0.005)
    with pytest.raises(ConfigurationError):
        LayerStack(grid, (np.full(4, 1.5),), (np.zeros(4),))
    with pytest.raises(GridMismatchError):
        LayerStack(grid, (np.ones(3),), (np.zeros(3),))
