"""Error types shared across the package."""


class MfsbmError(Exception):
    """Base class for all package errors."""


class DomainError(MfsbmError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class NumericError(MfsbmError, ArithmeticError):
    """A computation produced a non-finite or unreliable value.

    ``detail`` carries whatever context is useful for reproducing the
    failure (offending sample, best estimate, condition number, ...).
    """

    def __init__(self, message, **detail):
        super().__init__(message)
        self.detail = detail


class QuadratureError(NumericError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, estimate, error_bound):
        super().__init__(message, estimate=estimate, error_bound=error_bound)
        self.estimate = estimate
        self.error_bound = error_bound


class CapacityError(MfsbmError, RuntimeError):
    """A configured size limit (moment order, population) was exceeded."""


class ConfigError(MfsbmError, ValueError):
    """Invalid run configuration; ``violations`` lists every problem found."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ContractError(MfsbmError, ValueError):
    """A user-supplied coefficient breaks its declared contract."""
