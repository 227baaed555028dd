import os
import subprocess
import sys

import numpy as np
import pytest

from nearfield_sim import _kernels_py, kernels


@pytest.fixture
def geometry(rng):
    src = np.column_stack([rng.uniform(-0.05, 0.05, (40, 2)), np.zeros(40)])
    dst = np.column_stack([rng.uniform(-0.05, 0.05, (30, 2)), np.full(30, 0.07)])
    x = rng.normal(size=40) + 1j * rng.normal(size=40)
    return np.ascontiguousarray(src), np.ascontiguousarray(dst), x


def test_backends_agree(geometry):
    src, dst, x = geometry
    k0 = 2 * np.pi / 0.010714
    g1, *_ = kernels.green_dense(src, dst, k0)
    g2, *_ = _kernels_py.green_dense(src, dst, k0)
    assert np.max(np.abs(g1 - g2)) <= 1e-12 * np.max(np.abs(g2))
    y1, *_ = kernels.green_matvec(src, dst, k0, x)
    y2, *_ = _kernels_py.green_matvec(src, dst, k0, x)
    assert np.max(np.abs(y1 - y2)) <= 1e-12 * np.max(np.abs(y2))
    f1 = kernels.fresnel_matvec(src, dst, k0, 0.07, 2 - 1j, x)
    f2 = _kernels_py.fresnel_matvec(src, dst, k0, 0.07, 2 - 1j, x)
    assert np.max(np.abs(f1 - f2)) <= 1e-12 * np.max(np.abs(f2))


def test_singular_pair_reported(geometry):
    src, _, x = geometry
    for impl in (kernels, _kernels_py):
        _, q, n = impl.green_dense(src, src[5:8], 100.0)
        assert (q, n) == (0, 5)
        _, q, n = impl.green_matvec(src, src[5:8], 100.0, x)
        assert (q, n) == (0, 5)


def test_compiled_backend_built():
    assert kernels.BACKEND == "cython"


def test_pure_fallback_forced():
    env = dict(os.environ, NEARFIELD_SIM_PURE="1")
    out = subprocess.run([sys.executable, "-c", "import nearfield_sim.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
