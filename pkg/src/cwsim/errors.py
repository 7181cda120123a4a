"""Exception hierarchy for cwsim."""


class CWSError(Exception):
    """Base class for all package errors."""


class ArgumentError(CWSError, ValueError):
    pass


class DegenerateFieldError(CWSError, ValueError):
    pass


class CoverageError(CWSError, ValueError):
    """A phase pattern does not cover the lattice it is applied to."""


class FormatError(CWSError, ValueError):
    pass


class GridMismatchError(CWSError, ValueError):
    """A displacement is not an integer number of lattice pixels."""


class DegenerateDistributionError(CWSError, ValueError):
    pass


class ZeroAmplitudeError(CWSError, ValueError):
    """Weak value requested where the wave function vanishes."""


class EmptyRoiError(CWSError, ValueError):
    pass


class DisconnectedRoiError(CWSError, ValueError):
    pass


class ConvergenceError(CWSError, RuntimeError):
    pass


class DegenerateError(CWSError, ValueError):
    pass


class ConfigError(CWSError, ValueError):
    pass


class StageError(CWSError, RuntimeError):
    """Wraps an error raised inside a pipeline stage, tagged with the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
