"""Linear propagation operators: Green's-function matrices, Fresnel kernels,
diagonal layer modulations and their compositions.

Sign convention: forward propagation carries exp(-j k0 R). The Fresnel kernel
that agrees with this convention in the paraxial limit is

    h(x, y) = exp(-j k0 d) / (-j lambda d) * exp(-j k0 (x^2 + y^2) / 2d)

with transfer function exp(-j k0 d) * exp(+j pi lambda d (fx^2 + fy^2)) under
the forward DFT convention exp(-j 2 pi f x).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError, GridMismatchError, NumericalError, SingularityError
from .field import ComplexField

EXPLICIT_LIMIT = 2 ** 22
DUMP_MAGIC = 0x53494D4F50455231
_HEADER = struct.Struct("<IIQ")

KINDS = ("explicit_matrix", "matrix_free_green", "fresnel_kernel", "diagonal", "composite")


@dataclass(frozen=True, eq=False)
class LinearPropagator:
    """A linear map from fields on ``src_grid`` to fields on ``dst_grid``.

    ``matvec`` and ``rmatvec`` act on raw value arrays; ``rmatvec`` is the
    conjugate-transpose map used by the adjoint passes of the optimizer.
    """

    src_grid: object
    dst_grid: object
    kind: str
    matvec: Callable[[np.ndarray], np.ndarray]
    rmatvec: Callable[[np.ndarray], np.ndarray]
    matrix: np.ndarray | None = None
    payload: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dst_grid.size, self.src_grid.size)

    def to_dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        eye = np.eye(self.src_grid.size, dtype=np.complex128)
        return np.column_stack([self.matvec(eye[:, n]) for n in range(self.src_grid.size)])

    def __matmul__(self, other: "LinearPropagator") -> "LinearPropagator":
        return compose([other, self])


def apply(op: LinearPropagator, fld: ComplexField) -> ComplexField:
    if fld.grid.uid != op.src_grid.uid:
        raise GridMismatchError(f"operator expects grid {op.src_grid.uid}, field is on {fld.grid.uid}")
    out = op.matvec(fld.values)
    if not np.all(np.isfinite(out)):
        raise NumericalError("propagation produced non-finite values")
    return ComplexField(op.dst_grid, out)


def _raise_singular(bad_q, bad_n):
    if bad_q >= 0:
        raise SingularityError(int(bad_n), int(bad_q))


def explicit(src_grid, dst_grid, matrix: np.ndarray) -> LinearPropagator:
    m = np.ascontiguousarray(matrix, dtype=np.complex128)
    if m.shape != (dst_grid.size, src_grid.size):
        raise GridMismatchError(f"matrix shape {m.shape} does not match grids "
                                f"({dst_grid.size}, {src_grid.size})")
    m.setflags(write=False)
    return LinearPropagator(src_grid, dst_grid, "explicit_matrix",
                            lambda x: m @ x, lambda y: m.conj().T @ y, matrix=m)


def green_matrix(src, dst, wavelength: float, force: str | None = None) -> LinearPropagator:
    """Free-space Green's function exp(-j k0 R) / (4 pi R) from ``src`` to ``dst``.

    Explicit when the matrix has at most 2**22 entries, matrix-free otherwise;
    ``force`` ("explicit" or "matrix_free") overrides the choice.
    """
    k0 = 2 * math.pi / wavelength
    ps = np.ascontiguousarray(src.points3d)
    pd = np.ascontiguousarray(dst.points3d)
    mode = force or ("explicit" if len(ps) * len(pd) <= EXPLICIT_LIMIT else "matrix_free")
    payload = {"wavelength": wavelength}
    if mode == "explicit":
        g, bq, bn = kernels.green_dense(ps, pd, k0)
        _raise_singular(bq, bn)
        op = explicit(src, dst, g)
        return LinearPropagator(src, dst, "explicit_matrix", op.matvec, op.rmatvec,
                                matrix=op.matrix, payload=payload)
    if mode != "matrix_free":
        raise ConfigurationError(f"unknown green_matrix mode {force!r}")
    # probe for coincident points once, cheaply, on a zero input
    _, bq, bn = kernels.green_matvec(ps, pd, k0, np.zeros(len(ps), dtype=np.complex128))
    _raise_singular(bq, bn)

    def mv(x):
        return kernels.green_matvec(ps, pd, k0, np.ascontiguousarray(x, dtype=np.complex128))[0]

    def rmv(y):
        # reciprocity: G(a, b) = G(b, a), so G^H y = conj(G_rev conj(y))
        y = np.ascontiguousarray(np.conj(y), dtype=np.complex128)
        return np.conj(kernels.green_matvec(pd, ps, k0, y)[0])

    return LinearPropagator(src, dst, "matrix_free_green", mv, rmv, payload=payload)


def fresnel_prefactor(distance: float, wavelength: float) -> complex:
    k0 = 2 * math.pi / wavelength
    return complex(np.exp(-1j * k0 * distance) / (-1j * wavelength * distance))


def fresnel_operator(src, dst, distance: float, wavelength: float) -> LinearPropagator:
    """Discretized Fresnel integral with midpoint weight p^2 per source sample."""
    if not distance > 0:
        raise ConfigurationError("Fresnel propagation distance must be > 0")
    if dst.pitch != src.pitch:
        raise GridMismatchError("Fresnel propagation needs a shared lattice pitch")
    k0 = 2 * math.pi / wavelength
    ps = np.ascontiguousarray(src.points3d)
    pd = np.ascontiguousarray(dst.points3d)
    pref = fresnel_prefactor(distance, wavelength) * src.pitch ** 2

    def mv(x):
        return kernels.fresnel_matvec(ps, pd, k0, distance, pref, np.ascontiguousarray(x, dtype=np.complex128))

    def rmv(y):
        # the quadratic kernel is symmetric in (q, n)
        y = np.ascontiguousarray(np.conj(y), dtype=np.complex128)
        return np.conj(kernels.fresnel_matvec(pd, ps, k0, distance, pref, y))

    return LinearPropagator(src, dst, "fresnel_kernel", mv, rmv,
                            payload={"distance": distance, "wavelength": wavelength})


def fresnel_propagate(fld: ComplexField, distance: float, wavelength: float, dst=None) -> ComplexField:
    """Propagate an aperture field by ``distance`` with the Fresnel kernel.

    The destination defaults to the source lattice translated by ``distance``.
    """
    src = fld.grid
    if dst is None:
        dst = src.at_z(src.z + distance)
    return apply(fresnel_operator(src, dst, distance, wavelength), fld)


def fresnel_transfer(fx, fy, distance: float, wavelength: float):
    k0 = 2 * math.pi / wavelength
    f2 = np.asarray(fx) ** 2 + np.asarray(fy) ** 2
    return np.exp(-1j * k0 * distance) * np.exp(1j * math.pi * wavelength * distance * f2)


def diagonal(grid, coefficients) -> LinearPropagator:
    c = np.ascontiguousarray(coefficients, dtype=np.complex128).reshape(-1)
    if len(c) != grid.size:
        raise GridMismatchError(f"{len(c)} coefficients for a grid of {grid.size} samples")
    c.setflags(write=False)
    cc = np.conj(c)
    return LinearPropagator(grid, grid, "diagonal", lambda x: c * x, lambda y: cc * y,
                            payload={"diag": c})


def compose(ops: Sequence[LinearPropagator]) -> LinearPropagator:
    """Operator applying ``ops[0]`` first, then ``ops[1]``, and so on."""
    ops = list(ops)
    if not ops:
        raise ConfigurationError("cannot compose an empty operator list")
    for a, b in zip(ops, ops[1:]):
        if a.dst_grid.uid != b.src_grid.uid:
            raise GridMismatchError(f"operator chain breaks: {a.dst_grid.uid} -> {b.src_grid.uid}")
    if len(ops) == 1:
        return ops[0]
    seq = tuple(ops)

    def mv(x):
        for op in seq:
            x = op.matvec(x)
        return x

    def rmv(y):
        for op in reversed(seq):
            y = op.rmatvec(y)
        return y

    return LinearPropagator(seq[0].src_grid, seq[-1].dst_grid, "composite", mv, rmv,
                            payload={"factors": seq})


def cascade(stack, interlayer: Sequence[LinearPropagator]) -> LinearPropagator:
    """T = Gamma_L G_{L-1} ... G_1 Gamma_1 for a layer stack."""
    L = stack.layer_count
    if len(interlayer) != L - 1:
        raise GridMismatchError(f"{L} layers need {L - 1} inter-layer propagators, got {len(interlayer)}")
    ops = []
    for l in range(L):
        grid = stack.layer_grid(l)
        if l > 0 and interlayer[l - 1].dst_grid.uid != grid.uid:
            raise GridMismatchError(f"propagator {l} does not end on layer {l + 1}")
        if l < L - 1 and interlayer[l].src_grid.uid != grid.uid:
            raise GridMismatchError(f"propagator {l + 1} does not start on layer {l + 1}")
        ops.append(diagonal(grid, stack.layers[l]))
        if l < L - 1:
            ops.append(interlayer[l])
    return compose(ops)


def interlayer_propagators(stack, wavelength: float, engine: str = "green") -> list[LinearPropagator]:
    """Propagators between consecutive layers of ``stack`` (Green or Fresnel engine).

    Identical gaps reuse the same matrix, since the lattices are translates.
    """
    out = []
    cache: dict[float, LinearPropagator] = {}
    for l, d in enumerate(stack.spacings):
        src, dst = stack.layer_grid(l), stack.layer_grid(l + 1)
        if engine == "fresnel":
            out.append(fresnel_operator(src, dst, d, wavelength))
            continue
        if engine != "green":
            raise ConfigurationError(f"unknown propagation engine {engine!r}")
        base = cache.get(d)
        if base is None:
            base = green_matrix(src, dst, wavelength)
            cache[d] = base
            out.append(base)
        else:
            out.append(LinearPropagator(src, dst, base.kind, base.matvec, base.rmatvec,
                                        matrix=base.matrix, payload=base.payload))
    return out


def focusing_operator(t_sim: LinearPropagator, obs, wavelength: float) -> LinearPropagator:
    """G_SIM = H_Omega T_SIM, with H_Omega the Green matrix from the last layer to ``obs``."""
    h = green_matrix(t_sim.dst_grid, obs, wavelength)
    return compose([t_sim, h])


def dump_operator(op: LinearPropagator, path: str | Path) -> None:
    """Write the explicit matrix: header {u32 rows, u32 cols, u64 magic}, then re/im pairs."""
    m = op.to_dense()
    rows, cols = m.shape
    body = np.empty((rows, cols, 2), dtype="<f8")
    body[..., 0] = m.real
    body[..., 1] = m.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(rows, cols, DUMP_MAGIC))
        fh.write(body.tobytes(order="C"))


def load_operator_matrix(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise NumericalError(f"{path}: truncated operator dump")
    rows, cols, magic = _HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC:
        raise NumericalError(f"{path}: bad magic 0x{magic:016X}")
    expected = _HEADER.size + rows * cols * 16
    if len(raw) != expected:
        raise NumericalError(f"{path}: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(rows, cols, 2)
    return body[..., 0] + 1j * body[..., 1]
