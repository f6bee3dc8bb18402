"""Exceptions raised by this package.

Validation *reports* (see `core.ValidationReport` and
`closure.ViolationReport`) are plain data and never raised."""


class OnlineFwerError(Exception):
    """Base class for every error raised by `uw_online_fwer`."""


class InvariantViolation(OnlineFwerError, ValueError):
    """A weight sequence, lag structure, graph or threshold broke one of its
    invariants while a procedure was running."""


class SizeGuardError(OnlineFwerError, ValueError):
    """An exhaustive enumeration was requested above its configured size guard."""


class FamilyEvaluationError(OnlineFwerError):
    """An intersection-test family failed to evaluate on some index set."""

    def __init__(self, message: str, subset: tuple[int, ...] | None = None):
        super().__init__(message)
        self.subset = subset


class ConfigError(OnlineFwerError, ValueError):
    """An experiment configuration file could not be parsed or validated."""

    def __init__(self, message: str, line: int | None = None):
        self.message = message
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
