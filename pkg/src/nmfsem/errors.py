"""Exception types shared across the package."""


class NmfsemError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(NmfsemError, ValueError):
    """Input violates a documented invariant (negative, non-finite, bad shape)."""


class DimensionError(NmfsemError, ValueError):
    """Matrix shapes are incompatible with the requested operation."""


class InstabilityError(NmfsemError):
    """The feedback operator is not a contraction, so no equilibrium exists."""


class ConvergenceError(NmfsemError):
    """An iterative routine ran out of iterations before reaching tolerance.

    The ``partial`` attribute carries the best available result, if any.
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class DegenerateInputError(NmfsemError, ValueError):
    """Input is structurally unable to support the requested computation."""


class NumericalError(NmfsemError):
    """Optimization produced a non-finite quantity.

    ``iteration`` records the first update at which the failure was seen.
    """

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class InsufficientReplicatesError(NmfsemError):
    """Too few usable bootstrap replicates remain to form an interval."""


class NoFeasibleModelError(NmfsemError):
    """Every candidate cell violated the stability requirement."""


class ArtifactFormatError(NmfsemError, ValueError):
    """A serialized artifact is malformed or has an unsupported version."""
