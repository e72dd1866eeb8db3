"""Exception types shared across the package."""


class NumericalBreakdownError(ArithmeticError):
    """A probability or normalizer underflowed past the point of honest reporting."""


class AcceptanceStarvationError(RuntimeError):
    """Rejection sampling acceptance rate fell below the usable floor (1e-4)."""


class ConfigError(ValueError):
    """A run configuration is malformed (unknown keys, bad types, bad ranges)."""
