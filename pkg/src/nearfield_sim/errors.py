"""Exception types raised across the package."""


class NearfieldError(Exception):
    """Base class for all package errors."""


class ConfigurationError(NearfieldError, ValueError):
    """Scenario or argument values that violate a documented invariant."""


class GridMismatchError(NearfieldError, ValueError):
    pass


class SingularityError(NearfieldError, ValueError):
    """Coincident source/observation points in a Green's-function kernel."""

    def __init__(self, src_index, dst_index):
        self.src_index = src_index
        self.dst_index = dst_index
        super().__init__(
            f"coincident points: source sample {src_index} and destination sample {dst_index}"
        )


class NumericalError(NearfieldError, ArithmeticError):
    """Non-finite values or a failed numerical procedure."""


class FwhmError(NumericalError):
    """No usable half-maximum crossing around the peak of a cut."""


class CalibrationError(NearfieldError, ValueError):
    pass
