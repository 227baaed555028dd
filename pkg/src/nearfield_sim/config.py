"""Scenario configuration: physics, layer geometry, feed, thresholds, imperfections.

All lengths are meters, phases radians, frequencies Hz. A scenario file is a JSON
document with the top-level sections listed in ``SECTIONS``; unknown keys anywhere
are rejected rather than silently ignored.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .errors import ConfigurationError

SPEED_OF_LIGHT = 299_792_458.0
SECTIONS = ("physics", "layers", "feed", "thresholds", "imperfections", "calibration", "sweep")

FEED_KINDS = ("point_source", "uniform_plane")
SWEEP_SPACINGS = ("linear", "geometric")


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigurationError(msg)


@dataclass(frozen=True)
class FeedModel:
    kind: str = "point_source"
    # None: resolved to 0.2 * aperture diameter by SystemConfig
    feed_distance: float | None = None
    power: float = 1.0

    def __post_init__(self):
        _check(self.kind in FEED_KINDS, f"feed.kind must be one of {FEED_KINDS}, got {self.kind!r}")
        _check(self.power > 0, "feed.power must be > 0")
        if self.kind == "point_source" and self.feed_distance is not None:
            _check(self.feed_distance > 0, "feed.feed_distance must be > 0 for a point source")


@dataclass(frozen=True)
class Thresholds:
    gain_loss_db: float = 3.0
    lateral_retention: float = 0.958
    axial_retention: float = 0.8
    residual_phase: float = math.pi / 2
    trunc_phase: float = math.pi / 8

    def __post_init__(self):
        for f in fields(self):
            _check(getattr(self, f.name) > 0, f"thresholds.{f.name} must be > 0")
        _check(self.lateral_retention <= 1, "thresholds.lateral_retention must be <= 1")
        _check(self.axial_retention <= 1, "thresholds.axial_retention must be <= 1")


@dataclass(frozen=True)
class ImperfectionParams:
    misalignment: float = 0.0
    transmission_efficiency: float = 1.0
    phase_bits: int | None = None  # None = continuous phase
    spacing_deviation: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        _check(self.misalignment >= 0, "imperfections.misalignment must be >= 0")
        _check(0 < self.transmission_efficiency <= 1,
               "imperfections.transmission_efficiency must lie in (0, 1]")
        if self.phase_bits is not None:
            _check(isinstance(self.phase_bits, int) and self.phase_bits >= 1,
                   "imperfections.phase_bits must be a positive integer or null")
        _check(isinstance(self.rng_seed, int) and self.rng_seed >= 0,
               "imperfections.rng_seed must be a non-negative integer")

    @property
    def is_ideal(self) -> bool:
        return (self.misalignment == 0 and self.transmission_efficiency == 1
                and self.phase_bits is None and self.spacing_deviation == 0)


@dataclass(frozen=True)
class CalibrationCoefficients:
    """Semi-empirical resolution-model coefficients.

    ``xi_lat``/``xi_ax`` scale the WRMS inflation of the lateral/axial widths;
    ``xi_ali`` is the separate misalignment coefficient of the axial alignment
    factor. Zeros reduce every model to its diffraction-limited form.
    """

    xi_lat: float = 0.0
    xi_ax: float = 0.0
    xi_ali: float = 0.0
    chi_lat: float = 0.0
    mu: float = 1.0
    nu: float = 1.0
    gamma_loss: float = 0.0
    gamma_quant: float = 0.0
    gamma_gap: float = 0.0
    c_lat: float = 0.886
    c_ax: float = 2.0
    beta: float = 0.0
    xi_ax2: float = 0.0
    xi_ax4: float = 0.0
    eta_aper0: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for f in fields(self):
            if f.name == "eta_aper0":
                continue
            v = getattr(self, f.name)
            _check(math.isfinite(v) and v >= 0, f"calibration.{f.name} must be finite and >= 0")
        clean = {}
        for key, v in dict(self.eta_aper0).items():
            _check(0 < float(v) <= 1, "calibration.eta_aper0 values must lie in (0, 1]")
            clean[int(key)] = float(v)
        object.__setattr__(self, "eta_aper0", clean)

    def aperture_utilization(self, layer_count: int) -> float:
        return self.eta_aper0.get(layer_count, 1.0)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["eta_aper0"] = {str(k): v for k, v in sorted(self.eta_aper0.items())}
        return d


@dataclass(frozen=True)
class SweepPlan:
    r_min_frac: float = 0.05
    r_max_frac: float = 1.0
    num_points: int = 64
    spacing: str = "geometric"
    layer_counts: tuple[int, ...] = (1, 2, 3, 4)

    def __post_init__(self):
        _check(0 < self.r_min_frac < self.r_max_frac <= 1,
               "sweep requires 0 < r_min_frac < r_max_frac <= 1")
        _check(isinstance(self.num_points, int) and self.num_points >= 8,
               "sweep.num_points must be an integer >= 8")
        _check(self.spacing in SWEEP_SPACINGS, f"sweep.spacing must be one of {SWEEP_SPACINGS}")
        counts = tuple(int(v) for v in self.layer_counts)
        _check(len(counts) > 0 and all(v >= 1 for v in counts),
               "sweep.layer_counts must be a non-empty list of positive integers")
        object.__setattr__(self, "layer_counts", counts)


@dataclass(frozen=True)
class SystemConfig:
    wavelength: float
    aperture_diameter: float
    element_pitch: float | None = None
    layer_count: int = 1
    layer_spacings: tuple[float, ...] | None = None
    feed: FeedModel = field(default_factory=FeedModel)
    thresholds: Thresholds = field(default_factory=Thresholds)
    imperfections: ImperfectionParams = field(default_factory=ImperfectionParams)
    calibration: CalibrationCoefficients = field(default_factory=CalibrationCoefficients)
    sweep: SweepPlan = field(default_factory=SweepPlan)

    def __post_init__(self):
        _check(self.wavelength > 0, "physics.wavelength must be > 0")
        _check(self.aperture_diameter > 0, "physics.aperture_diameter must be > 0")
        _check(isinstance(self.layer_count, int) and self.layer_count >= 1,
               "layers.count must be an integer >= 1")
        if self.element_pitch is None:
            object.__setattr__(self, "element_pitch", self.wavelength / 2)
        _check(self.element_pitch > 0, "physics.element_pitch must be > 0")
        _check(self.element_pitch <= self.wavelength,
               "physics.element_pitch must not exceed the wavelength")
        if self.layer_spacings is None:
            spacings = (5 * self.wavelength,) * (self.layer_count - 1)
        else:
            spacings = tuple(float(s) for s in self.layer_spacings)
        _check(len(spacings) == self.layer_count - 1,
               f"layers.spacings needs {self.layer_count - 1} entries, got {len(spacings)}")
        _check(all(s > 0 for s in spacings), "layer spacings must be > 0")
        object.__setattr__(self, "layer_spacings", spacings)
        if self.feed.kind == "point_source" and self.feed.feed_distance is None:
            object.__setattr__(self, "feed", replace(self.feed, feed_distance=0.2 * self.aperture_diameter))
        if spacings:
            _check(abs(self.imperfections.spacing_deviation) < min(spacings),
                   "|imperfections.spacing_deviation| must be below the smallest layer spacing")

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.wavelength

    def nominal_spacing(self) -> float | None:
        return self.layer_spacings[0] if self.layer_spacings else None

    def with_layers(self, layer_count: int) -> "SystemConfig":
        """Same scenario with ``layer_count`` layers at the configured uniform spacing."""
        if layer_count == self.layer_count:
            return self
        d = self.layer_spacings[0] if self.layer_spacings else 5 * self.wavelength
        return replace(self, layer_count=layer_count, layer_spacings=(d,) * (layer_count - 1))

    def to_dict(self) -> dict[str, Any]:
        return {
            "physics": {
                "wavelength": self.wavelength,
                "aperture_diameter": self.aperture_diameter,
                "element_pitch": self.element_pitch,
            },
            "layers": {"count": self.layer_count, "spacings": list(self.layer_spacings)},
            "feed": asdict(self.feed),
            "thresholds": asdict(self.thresholds),
            "imperfections": asdict(self.imperfections),
            "calibration": self.calibration.to_dict(),
            "sweep": {**asdict(self.sweep), "layer_counts": list(self.sweep.layer_counts)},
        }


def default_config(**physics) -> SystemConfig:
    """The shipped desk-scale scenario (28 GHz, D = 0.12 m, three layers at 5 lambda)."""
    wavelength = physics.pop("wavelength", 0.010714)
    return SystemConfig(
        wavelength=wavelength,
        aperture_diameter=physics.pop("aperture_diameter", 0.12),
        layer_count=physics.pop("layer_count", 3),
        **physics,
    )


def _take(section: str, data: Any, allowed: set[str]) -> dict[str, Any]:
    if not isinstance(data, dict):
        raise ConfigurationError(f"section {section!r} must be a JSON object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")
    return dict(data)


def _names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def config_from_dict(doc: dict[str, Any]) -> SystemConfig:
    """Build a validated ``SystemConfig`` from a parsed scenario document."""
    doc = _take("<scenario>", doc, set(SECTIONS))
    if "physics" not in doc:
        raise ConfigurationError("scenario is missing the 'physics' section")
    phys = _take("physics", doc["physics"], {"wavelength", "frequency", "aperture_diameter", "element_pitch"})
    if ("wavelength" in phys) == ("frequency" in phys):
        raise ConfigurationError("physics needs exactly one of 'wavelength' or 'frequency'")
    if "frequency" in phys:
        freq = float(phys.pop("frequency"))
        _check(freq > 0, "physics.frequency must be > 0")
        phys["wavelength"] = SPEED_OF_LIGHT / freq
    if "aperture_diameter" not in phys:
        raise ConfigurationError("physics.aperture_diameter is required")

    layers = _take("layers", doc.get("layers", {}), {"count", "spacing", "spacings"})
    count = layers.get("count", 1)
    spacings = None
    if "spacing" in layers and "spacings" in layers:
        raise ConfigurationError("layers accepts 'spacing' or 'spacings', not both")
    if "spacings" in layers:
        spacings = tuple(layers["spacings"])
    elif "spacing" in layers:
        spacings = (float(layers["spacing"]),) * (int(count) - 1)

    try:
        return SystemConfig(
            wavelength=float(phys["wavelength"]),
            aperture_diameter=float(phys["aperture_diameter"]),
            element_pitch=phys.get("element_pitch"),
            layer_count=count,
            layer_spacings=spacings,
            feed=FeedModel(**_take("feed", doc.get("feed", {}), _names(FeedModel))),
            thresholds=Thresholds(**_take("thresholds", doc.get("thresholds", {}), _names(Thresholds))),
            imperfections=ImperfectionParams(
                **_take("imperfections", doc.get("imperfections", {}), _names(ImperfectionParams))),
            calibration=CalibrationCoefficients(
                **_take("calibration", doc.get("calibration", {}), _names(CalibrationCoefficients))),
            sweep=SweepPlan(**_take("sweep", doc.get("sweep", {}), _names(SweepPlan))),
        )
    except TypeError as exc:  # wrong value types surface here
        raise ConfigurationError(str(exc)) from exc


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply ``section.key=value`` overrides to a raw scenario document (copy)."""
    out = json.loads(json.dumps(doc))
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) < 2 or parts[0] not in SECTIONS:
            raise ConfigurationError(f"override key {key!r} must start with one of {SECTIONS}")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override key {key!r} descends into a non-object")
        node[parts[-1]] = _parse_value(value)
    return out


def load_scenario(path: str | Path, overrides: list[str] | None = None) -> tuple[SystemConfig, dict[str, Any]]:
    """Read a scenario file; returns the config and the raw (overridden) document."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"scenario file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"scenario file {path} is not valid JSON: {exc}") from exc
    if overrides:
        doc = apply_overrides(doc, overrides)
    return config_from_dict(doc), doc


def scenario_hash(config: SystemConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
