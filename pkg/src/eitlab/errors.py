"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Invalid input or violated precondition."""


class DegeneratePartitionError(ValidationError):
    """A pixel region ended up empty or disconnected on the given mesh."""


class GaugeError(ValidationError):
    """Boundary data is incompatible with the mean-zero gauge."""


class NumericalError(RuntimeError):
    """Factorization or eigen solve failed."""


class ResourceError(MemoryError):
    """Requested discretization exceeds the memory budget."""
