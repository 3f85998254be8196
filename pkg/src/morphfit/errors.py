class FormatError(ValueError):
    """A file or config failed validation. ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class FitError(RuntimeError):
    """Numerical failure during optimization (non-finite residual or objective)."""
