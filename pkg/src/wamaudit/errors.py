"""Exception hierarchy shared by every audit stage."""


class WamError(Exception):
    """Base class for audit failures."""

    category = "error"


class ConfigError(WamError, ValueError):
    category = "config"


class DataError(WamError, ValueError):
    category = "data"


class FitError(WamError, RuntimeError):
    """A model could not be fit (rank deficiency, separation, bad outcome)."""

    category = "fit"

    def __init__(self, message, group=None):
        if group is not None:
            message = f"group {group!r}: {message}"
        super().__init__(message)
        self.group = group
