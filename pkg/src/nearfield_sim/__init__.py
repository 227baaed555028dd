"""Scalar-wave simulation of stacked transmissive metasurfaces focusing in the near field."""

__version__ = "0.1.0"

from .config import SystemConfig, default_config, load_scenario  # noqa: E402
from .errors import (CalibrationError, ConfigurationError, FwhmError,  # noqa: E402
                     GridMismatchError, NearfieldError, NumericalError, SingularityError)
from .field import ComplexField  # noqa: E402
from .kernels import BACKEND  # noqa: E402

__all__ = [
    "BACKEND", "CalibrationError", "ComplexField", "ConfigurationError", "FwhmError",
    "GridMismatchError", "NearfieldError", "NumericalError", "SingularityError", "SystemConfig",
    "default_config", "load_scenario", "__version__",
]
