"""Exception types shared across the package."""


class TdoaLabError(Exception):
    """Base class for all errors raised by tdoa_lab."""


class DegenerateGeometryError(TdoaLabError, ValueError):
    """Sensor/source geometry makes a Jacobian or information matrix rank deficient."""


class ConfigError(TdoaLabError, ValueError):
    """Malformed or inconsistent configuration."""


class NumericalConsistencyError(TdoaLabError, ArithmeticError):
    """Two algebraically equivalent computation paths disagree beyond tolerance."""
