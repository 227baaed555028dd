"""Aperture lattice and observation cuts, with the feed illumination."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .config import FeedModel, SystemConfig
from .errors import ConfigurationError
from .field import ComplexField


def _uid(tag: str, *arrays) -> str:
    h = hashlib.sha1(tag.encode())
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return f"{tag}:{h.hexdigest()[:12]}"


@dataclass(frozen=True, eq=False)
class ApertureGrid:
    """Square lattice of element centers masked to a circular aperture.

    ``positions`` and ``indices`` cover the full bounding lattice in row-major
    order (y outer, x inner); ``active_mask`` selects the elements inside the
    aperture. Fields on this grid carry one value per *active* element.
    """

    positions: np.ndarray      # (M, 2) lattice coordinates in meters
    indices: np.ndarray        # (M, 2) integer lattice indices (ix, iy)
    active_mask: np.ndarray    # (M,) bool
    pitch: float
    z: float = 0.0

    def __post_init__(self):
        for name in ("positions", "indices", "active_mask"):
            getattr(self, name).setflags(write=False)
        object.__setattr__(self, "_active", np.flatnonzero(self.active_mask))
        pts = self.positions[self._active]
        p3 = np.column_stack([pts, np.full(len(pts), float(self.z))])
        p3.setflags(write=False)
        object.__setattr__(self, "_points3d", p3)
        object.__setattr__(self, "_uid", _uid("aperture", p3))

    @property
    def uid(self) -> str:
        return self._uid

    @property
    def size(self) -> int:
        return len(self._active)

    @property
    def active_positions(self) -> np.ndarray:
        return self._points3d[:, :2]

    @property
    def active_indices(self) -> np.ndarray:
        return self.indices[self._active]

    @property
    def rho(self) -> np.ndarray:
        return np.hypot(self._points3d[:, 0], self._points3d[:, 1])

    @property
    def points3d(self) -> np.ndarray:
        return self._points3d

    @property
    def half_extent(self) -> int:
        return int(np.max(np.abs(self.indices)))

    def at_z(self, z: float) -> "ApertureGrid":
        """The same lattice translated to the plane ``z``."""
        return ApertureGrid(self.positions, self.indices, self.active_mask, self.pitch, float(z))


def build_aperture(config: SystemConfig) -> ApertureGrid:
    """Lattice at ``element_pitch`` centered on boresight, masked to diameter D."""
    return aperture_grid(config.aperture_diameter, config.element_pitch)


def aperture_grid(diameter: float, pitch: float, z: float = 0.0) -> ApertureGrid:
    if pitch > diameter:
        raise ConfigurationError(
            f"element pitch {pitch:g} m exceeds aperture diameter {diameter:g} m: no active elements")
    radius = diameter / 2
    m = int(math.floor(radius / pitch * (1 + 1e-12)))
    k = np.arange(-m, m + 1)
    iy, ix = np.meshgrid(k, k, indexing="ij")  # y outer, x inner
    indices = np.column_stack([ix.ravel(), iy.ravel()])
    positions = indices * float(pitch)
    rho = np.hypot(positions[:, 0], positions[:, 1])
    active = rho <= radius * (1 + 1e-12)
    return ApertureGrid(positions, indices, active, float(pitch), float(z))


def equivalent_diameter(grid: ApertureGrid) -> float:
    """Diameter of the circle with the same area as N cells of pitch p."""
    return 2.0 * math.sqrt(grid.size * grid.pitch ** 2 / math.pi)


@dataclass(frozen=True, eq=False)
class ObservationGrid:
    """A lateral cut {(x, 0, r)} followed by an axial cut {(0, 0, z)}."""

    r: float
    lateral_x: np.ndarray
    axial_z: np.ndarray

    def __post_init__(self):
        lx = np.asarray(self.lateral_x, dtype=np.float64)
        az = np.asarray(self.axial_z, dtype=np.float64)
        if np.any(np.diff(lx) <= 0) or np.any(np.diff(az) <= 0):
            raise ConfigurationError("observation cut coordinates must be strictly increasing")
        if not (np.any(lx == 0.0) and np.any(az == self.r)):
            raise ConfigurationError("focal point must be a sample of both cuts")
        lat = np.column_stack([lx, np.zeros_like(lx), np.full_like(lx, self.r)])
        ax = np.column_stack([np.zeros_like(az), np.zeros_like(az), az])
        pts = np.vstack([lat, ax])
        pts.setflags(write=False)
        object.__setattr__(self, "lateral_x", lx)
        object.__setattr__(self, "axial_z", az)
        object.__setattr__(self, "_points3d", pts)
        object.__setattr__(self, "_uid", _uid("obs", pts))

    @classmethod
    def cuts(cls, r, lat_half, lat_step, ax_lo, ax_hi, ax_step) -> "ObservationGrid":
        n_lat = int(math.floor(lat_half / lat_step + 1e-9))
        x = np.arange(-n_lat, n_lat + 1) * lat_step
        k_lo = -int(math.floor((r - ax_lo) / ax_step + 1e-9))
        k_hi = int(math.floor((ax_hi - r) / ax_step + 1e-9))
        z = r + np.arange(k_lo, k_hi + 1) * ax_step
        z[-k_lo] = r  # keep the focal sample exact
        return cls(float(r), x, z)

    @property
    def uid(self) -> str:
        return self._uid

    @property
    def size(self) -> int:
        return len(self._points3d)

    @property
    def points3d(self) -> np.ndarray:
        return self._points3d

    @property
    def n_lateral(self) -> int:
        return len(self.lateral_x)


def point_grid(points) -> "PointGrid":
    return PointGrid(np.atleast_2d(np.asarray(points, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class PointGrid:
    """Arbitrary 3-D sample points (used for single focal points and tests)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "_uid", _uid("points", pts))

    @property
    def uid(self) -> str:
        return self._uid

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def points3d(self) -> np.ndarray:
        return self.points


def feed_field(feed: FeedModel, grid: ApertureGrid, wavelength: float) -> ComplexField:
    """Illumination on the first layer, scaled so that sum |E|^2 equals ``feed.power``."""
    if feed.kind == "uniform_plane":
        values = np.ones(grid.size, dtype=np.complex128)
    else:
        if feed.feed_distance is None:
            raise ConfigurationError("point-source feed needs a feed_distance")
        k0 = 2 * math.pi / wavelength
        R = np.sqrt(grid.rho ** 2 + feed.feed_distance ** 2)
        values = np.exp(-1j * k0 * R) / R
    values = values * math.sqrt(feed.power / np.vdot(values, values).real)
    return ComplexField(grid, values)
