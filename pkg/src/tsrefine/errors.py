"""Exception types shared across the package."""


class TsRefineError(Exception):
    """Base class for all package errors."""


class DegenerateDistribution(TsRefineError):
    """A plateau has no probability mass on its video's frame grid."""


class InfeasibleLayout(TsRefineError):
    """Requested segments and gaps cannot fit inside the video length."""


class FormatError(TsRefineError):
    """Malformed dataset, checkpoint, or config file."""


class DimensionMismatch(TsRefineError, ValueError):
    pass


class MissingScores(TsRefineError, KeyError):
    pass


class EmptyInterval(TsRefineError, ValueError):
    pass


class EmptySegment(TsRefineError, ValueError):
    pass


class CountMismatch(TsRefineError, ValueError):
    pass


class ConfigError(TsRefineError, ValueError):
    """Invalid configuration value or unknown/missing key."""
