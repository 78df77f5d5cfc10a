"""
Exception hierarchy shared by the kernel, regression, partition, environment,
theory and harness layers.

Library code raises these; the experiment runner catches ``KrviError`` per seed,
logs it and carries on with the remaining seeds.
"""

from typing import Optional


class KrviError(Exception):
    """Base class for every error raised by this project."""


class InvalidInputError(KrviError, ValueError):
    """A precondition on an argument was violated (shape, range, index)."""


class NumericalDegeneracyError(KrviError, ArithmeticError):
    """Cholesky breakdown or a posterior variance that is clearly negative."""


class NotPolynomialEigendecayError(KrviError):
    """The kernel family has no polynomial eigendecay profile."""


class UnsupportedKernelError(KrviError):
    """The requested operation is not defined for this kernel family."""


class InvalidProfileError(KrviError, ValueError):
    """An eigendecay profile cannot be used by a bound formula (p_tilde <= 1)."""


class DegenerateInputError(KrviError, ValueError):
    """Bound inputs outside the regime where the formula is meaningful."""


class NoFixedPointError(KrviError):
    """The confidence-width iteration did not converge."""

    def __init__(self, message: str, last_value: Optional[float] = None):
        super().__init__(message)
        self.last_value = last_value


class InsufficientDataError(KrviError):
    """Too few usable points for a regression fit."""


class ConfigurationError(KrviError):
    """Invalid configuration; ``field_path`` names the offending dotted key."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path
        self.message = message
