"""Exception hierarchy.

Validation problems (bad files, bad arguments, domain violations) derive from
``ValueError``; runtime filter failures derive from ``RuntimeError``.  The CLI
maps the former to exit code 2 and :class:`FilterCollapse` to exit code 3.
"""


class RailmagError(Exception):
    """Base class for all package errors."""


class ParseError(RailmagError, ValueError):
    """A file row or config value could not be parsed."""


class SpacingError(RailmagError, ValueError):
    """Samples are not uniformly spaced."""


class DomainError(RailmagError, ValueError):
    """An argument lies outside the admissible domain."""


class DegenerateSignalError(RailmagError, ValueError):
    """A signal window carries no usable variation."""


class MonotonicityError(RailmagError, ValueError):
    """A sequence that must be strictly increasing is not."""


class EmptyOutputError(RailmagError, ValueError):
    """A transform would produce fewer than two samples."""


class LengthMismatchError(RailmagError, ValueError):
    """Two sequences that must have equal length do not."""


class InfeasibleBandError(RailmagError, ValueError):
    """A warping band is too narrow to connect the sequence endpoints."""


class QueryTooLongError(RailmagError, ValueError):
    """A search query is longer than the reference."""


class CoverageError(RailmagError, ValueError):
    """Timestamps fall outside the ground-truth coverage."""


class BoundsError(RailmagError, ValueError):
    """A simulated trajectory leaves the map."""


class ConfigError(RailmagError, ValueError):
    """Unknown or invalid configuration key."""


class FilterCollapse(RailmagError, RuntimeError):
    """Every particle weight became zero."""
