"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration problems exit 2,
numerical failures 3, detection failures 4.
"""


class NanopatError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(NanopatError, ValueError):
    """Malformed input, configuration or violated precondition."""

    exit_code = 2

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class NumericalError(NanopatError, ArithmeticError):
    """A computation hit a singularity, a mask or failed to converge."""

    exit_code = 3


class PoleError(NumericalError):
    """Evaluation exactly at a pole of a dispersion model."""


class MaskedPointError(NumericalError):
    """The requested point lies in a masked region of a field."""


class ConvergenceError(NumericalError):
    """An iteration (geodesic back-tracing) did not terminate."""


class DetectionError(NanopatError):
    """Arrival or resonance detection failed on measured data."""

    exit_code = 4
