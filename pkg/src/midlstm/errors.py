"""Exception and warning types raised across the package."""


class MidLSTMError(Exception):
    """Base class for all package errors."""


class MissingColumn(MidLSTMError, KeyError):
    pass


class NonMonotoneDates(MidLSTMError, ValueError):
    pass


class EmptyTable(MidLSTMError, ValueError):
    pass


class NonPositivePrice(MidLSTMError, ValueError):
    pass


class DegenerateRange(MidLSTMError, ValueError):
    pass


class SeriesTooShort(MidLSTMError, ValueError):
    pass


class DimensionMismatch(MidLSTMError, ValueError):
    pass


class InsufficientData(MidLSTMError, ValueError):
    pass


class WrongStateCount(MidLSTMError, ValueError):
    pass


class DegenerateVector(MidLSTMError, ValueError):
    pass


class ZeroVariancePortfolio(MidLSTMError, ValueError):
    pass


class ConfigError(MidLSTMError, ValueError):
    pass


class NotFittedError(MidLSTMError, AttributeError):
    pass


class StateDegenerate(UserWarning):
    """HMM state means coincide, so semantic labels fall back to state index."""


class RankDeficient(UserWarning):
    """Design matrix lost rank and a small ridge term was added to the solve."""


class EmptySelection(UserWarning):
    """No asset passed the selection threshold for a window."""
