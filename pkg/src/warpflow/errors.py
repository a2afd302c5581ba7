"""Exception taxonomy shared across the package."""


class WarpflowError(Exception):
    """Base class for all package errors."""


class DegeneratePoint(WarpflowError):
    """A point too close to the singular locus of a projection (e.g. sphere center)."""


class InvalidShapeParameters(WarpflowError):
    """Domain shape parameters are inconsistent (e.g. annulus with r_in >= r_out)."""


class NonPositiveCoefficient(WarpflowError):
    """A diffusion coefficient failed the positivity requirement."""


class SolverFailure(WarpflowError):
    """An iterative linear solve did not reach tolerance within its iteration cap."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class DegenerateBoundaryData(WarpflowError):
    """Boundary data with zero energy where nonzero energy is required."""


class StepRejected(WarpflowError):
    """Internal control flow: a trial step moved a node too far and must be retried."""


class TimestepUnderflow(WarpflowError):
    """The timestep was halved below its floor; operational blow-up signal."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class InsufficientSeries(WarpflowError):
    """A diagnostic needs more recorded frames than the report contains."""


class ConfigParseError(WarpflowError):
    """A scenario config file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        super().__init__(message)
        self.path = path
        self.line = line
