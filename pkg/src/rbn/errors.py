"""Exception types raised across the package."""

import numpy as np


class RbnError(Exception):
    """Base class for all package errors."""


class ValidationError(RbnError, ValueError):
    """A model or input failed validation."""


class NumericError(RbnError, ArithmeticError):
    """A numeric computation could not be completed."""


class NotPositiveDefinite(NumericError, np.linalg.LinAlgError):
    pass


class NonFinite(NumericError):
    pass


class NotSimplex(ValidationError):
    pass


class NotCnf(ValidationError):
    pass


class ContinuousVariable(ValidationError):
    pass


class NonConvergentCycle(NumericError):
    pass


class BudgetExceeded(NumericError):
    """Sampling exceeded its node or attempt budget."""


class LengthMismatch(ValidationError):
    pass
