"""Exception hierarchy shared by all modules."""


class ConcatError(Exception):
    """Base class for every error raised by concatmc."""


class ConfigurationError(ConcatError, ValueError):
    """A process, kernel, plan or config document is malformed."""


class DomainError(ConcatError, ValueError):
    """An argument lies outside the domain of an operation."""


class RevivalUndefined(ConcatError):
    """The dying path has no exit point, so no revival point can be drawn."""


class CensoredRegionError(ConcatError):
    """A path was evaluated beyond the time at which it was censored."""


class UnsupportedEngineError(ConcatError):
    """The requested computation engine cannot handle these process specs."""


class NumericError(ConcatError, ArithmeticError):
    """A linear solve or series evaluation failed."""


class EmptyDomainError(ConcatError, ValueError):
    """An absorbing set leaves no transient states to solve over."""
