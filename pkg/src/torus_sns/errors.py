"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ModeSetMismatch(ValueError):
    """Two fields that must share a truncation do not."""


class ConfigurationError(ValueError):
    """A numerical setting cannot be honoured (e.g. transform too small)."""


class HypothesisWarning(UserWarning):
    """Parameters fall outside the range where an estimate is known to hold."""


class NumericAbort(RuntimeError):
    """Integration produced non-finite values."""
