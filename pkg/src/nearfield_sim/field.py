"""Complex field samples attached to a grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, NumericalError


@dataclass(frozen=True, eq=False)
class ComplexField:
    grid: object
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.complex128).reshape(-1)
        if values.shape[0] != self.grid.size:
            raise GridMismatchError(
                f"field has {values.shape[0]} samples but grid {self.grid.uid} has {self.grid.size}")
        if not np.all(np.isfinite(values)):
            raise NumericalError("field contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def power(self) -> float:
        return float(np.vdot(self.values, self.values).real)

    def with_values(self, values) -> "ComplexField":
        return ComplexField(self.grid, values)

    def conj(self) -> "ComplexField":
        return ComplexField(self.grid, np.conj(self.values))


def require_same_grid(a, b, what="field") -> None:
    if a.uid != b.uid:
        raise GridMismatchError(f"{what}: grid {a.uid} does not match grid {b.uid}")
