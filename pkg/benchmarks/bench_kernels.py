"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 400 1600] [--repeat 5]

Both backends are imported directly, so the comparison does not depend on
which one ``nearfield_sim.kernels`` selected.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from nearfield_sim import _kernels_py

try:
    from nearfield_sim import _kernels as _compiled
except ImportError:
    _compiled = None

WAVELENGTH = 0.010714
K0 = 2 * np.pi / WAVELENGTH


def lattice(n: int, z: float) -> np.ndarray:
    side = int(np.ceil(np.sqrt(n)))
    k = (np.arange(side) - side // 2) * WAVELENGTH / 2
    yy, xx = np.meshgrid(k, k, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel(), np.full(side * side, z)])
    return np.ascontiguousarray(pts[:n])


def cases(n: int):
    src, dst = lattice(n, 0.0), lattice(n, 5 * WAVELENGTH)
    x = np.random.default_rng(0).normal(size=n) + 0j
    pre = np.exp(-1j * K0 * 0.05) / (-1j * WAVELENGTH * 0.05) * (WAVELENGTH / 2) ** 2
    return {
        "green_dense": lambda m: m.green_dense(src, dst, K0),
        "green_matvec": lambda m: m.green_matvec(src, dst, K0, x),
        "fresnel_matvec": lambda m: m.fresnel_matvec(src, dst, K0, 0.05, pre, x),
    }


def best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[400, 1600])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; only the numpy fallback is timed")
    print(f"{'kernel':<16}{'N':>6}{'numpy [ms]':>13}{'cython [ms]':>13}{'speedup':>9}{'max |diff|':>12}")
    for n in args.sizes:
        for name, call in cases(n).items():
            t_py = best(lambda: call(_kernels_py), args.repeat)
            if _compiled is None:
                print(f"{name:<16}{n:>6}{t_py * 1e3:>13.2f}{'-':>13}{'-':>9}{'-':>12}")
                continue
            t_c = best(lambda: call(_compiled), args.repeat)
            diff = np.max(np.abs(np.asarray(call(_compiled)[0]) - np.asarray(call(_kernels_py)[0])))
            print(f"{name:<16}{n:>6}{t_py * 1e3:>13.2f}{t_c * 1e3:>13.2f}{t_py / t_c:>8.1f}x{diff:>12.1e}")


if __name__ == "__main__":
    main()
