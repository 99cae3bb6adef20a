"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Invalid input: bad configuration, out-of-range parameter, point outside the domain."""


class NumericalFailure(RuntimeError):
    """A numerical stage failed: solver breakdown, overflow guard, lost contraction."""
