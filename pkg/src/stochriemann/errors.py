"""Exception hierarchy.

Everything raised on purpose by the package derives from ``StochRiemannError``;
most classes also subclass ``ValueError`` so callers that only care about bad
input can catch that.
"""


class StochRiemannError(Exception):
    pass


class DegenerateInputError(StochRiemannError, ValueError):
    """Non-finite samples where finite ones are required."""


class AlignmentError(StochRiemannError, ValueError):
    """Objects built on different probability spaces (or grids) were mixed."""


class DomainError(StochRiemannError, ValueError):
    pass


class ParameterError(StochRiemannError, ValueError):
    pass


class GridError(StochRiemannError, ValueError):
    pass


class PreconditionError(StochRiemannError, ValueError):
    pass


class EnumerationGuardError(PreconditionError):
    """Subset enumeration requested for too many summands."""


class ResourceError(StochRiemannError, RuntimeError):
    """A partition or grid would exceed the configured cell budget."""


class CoverageError(StochRiemannError, ValueError):
    """A grid does not reach far enough to hold the kernel support."""


class InconclusiveError(StochRiemannError, RuntimeError):
    """A convergence report was rejected, so an identity cannot be judged."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
