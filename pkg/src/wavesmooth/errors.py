"""Exception hierarchy shared by the whole pipeline."""


class WavesmoothError(Exception):
    """Base class for all errors raised by this package."""


class RejectedInputError(WavesmoothError, ValueError):
    """An argument violates a documented precondition."""


class UnitError(RejectedInputError):
    """Unit tags are unknown or belong to different dimensions."""


class FormatError(WavesmoothError, ValueError):
    """A data file does not match its documented format.

    ``location`` names the offending row/column or header key when known.
    """

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)


class DomainError(WavesmoothError, ValueError):
    """A query point lies outside the valid sampling domain.

    ``valid_range`` carries the closed bounds of the usable domain as
    ((t_min, t_max), (x_min, x_max)).
    """

    def __init__(self, message: str, valid_range=None):
        self.valid_range = valid_range
        if valid_range is not None:
            message = f"{message}; valid range {valid_range}"
        super().__init__(message)


class DegenerateTrajectoryError(WavesmoothError, ValueError):
    """A trajectory is too short to carry boundary conditions."""


class DegenerateProblemError(WavesmoothError, ValueError):
    """A smoothing problem cannot be assembled from the given reference."""


class RateTableError(WavesmoothError, ValueError):
    """An emission rate table is incomplete or malformed.

    ``missing`` lists the absent (pollutant, opmode id) pairs.
    """

    def __init__(self, message: str, missing=None):
        self.missing = list(missing) if missing else []
        if self.missing:
            message = f"{message}: missing {self.missing}"
        super().__init__(message)


class SolverFailureError(WavesmoothError, RuntimeError):
    """The QP solver did not return an optimal solution.

    ``solution`` holds the best iterate and its status for diagnosis.
    """

    def __init__(self, message: str, solution=None):
        self.solution = solution
        super().__init__(message)


class ConfigError(WavesmoothError, ValueError):
    """A configuration file or manifest is invalid."""
