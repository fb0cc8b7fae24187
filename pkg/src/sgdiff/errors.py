class ConfigurationError(ValueError):
    """Bad configuration: unknown family/key, inconsistent parameters."""


class DomainError(ValueError):
    """An argument lies outside the region where the operation is valid."""


class NumericalPSDError(ArithmeticError):
    """A covariance matrix has an eigenvalue clearly below zero."""
