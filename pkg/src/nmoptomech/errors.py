"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Raised when a run configuration is malformed or inconsistent."""


class NumericalFailure(RuntimeError):
    """Raised when an integrator detects blow-up, drift, or loss of validity."""


class TruncationError(NumericalFailure):
    """Raised when probability leaks into the top levels of a truncated basis.

    Carries a suggestion for enlarged mode dimensions in ``suggested_dims``.
    """

    def __init__(self, message, suggested_dims=None):
        super().__init__(message)
        self.suggested_dims = suggested_dims
