"""Exception hierarchy shared across the package.

Every error derives from :class:`ToGraspError` so callers (notably the CLI)
can map families of failures onto exit codes.
"""


class ToGraspError(Exception):
    """Base class for all package errors."""


class DimensionError(ToGraspError, ValueError):
    pass


class ConfigurationError(ToGraspError, ValueError):
    pass


class NumericalError(ToGraspError, FloatingPointError):
    pass


class TrainingError(NumericalError):
    pass


class DomainError(ToGraspError, ValueError):
    pass


class EvaluationError(ToGraspError):
    pass


class PlacementError(ToGraspError):
    pass


class CompositionError(ToGraspError):
    pass


class SplitError(ToGraspError):
    pass


class GenerationError(ToGraspError, ValueError):
    pass


class TokenizationError(ToGraspError, ValueError):
    pass


class EncodingError(ToGraspError, ValueError):
    pass


class CheckpointError(ToGraspError):
    pass


class SamplingError(ToGraspError):
    pass
