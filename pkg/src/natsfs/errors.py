"""Exception hierarchy for natsfs."""


class NatsfsError(Exception):
    """Base class for all natsfs errors."""


class DomainEmpty(NatsfsError):
    """Mask contains no inside pixels."""


class NotUnitNormal(NatsfsError):
    """Normal vector is not unit length."""


class DegenerateNormal(NatsfsError):
    """Normalization factor vanished while computing normals."""


class NonFiniteDepth(NatsfsError):
    """Depth conversion produced non-finite values (exp overflow)."""


class InvalidPriorDepth(NatsfsError):
    """Nonpositive metric depth cannot be mapped to log-depth."""


class InsufficientData(NatsfsError):
    """Too few usable pixels for lighting estimation."""


class SolverDiverged(NatsfsError):
    """Solver produced a non-finite state."""

    def __init__(self, message, pixel=None):
        super().__init__(message)
        self.pixel = pixel


class DegenerateLinearization(NatsfsError):
    """Frozen-coefficient baseline has no depth dependence (a == 0)."""


class ConfigError(NatsfsError):
    """Invalid or inconsistent configuration."""


class FormatError(NatsfsError):
    """Malformed input file."""
