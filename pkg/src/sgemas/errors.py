"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is missing, mistyped or out of range."""


class SchemaError(ValueError):
    """A CSV file does not expose the requested columns."""


class ParseError(ValueError):
    """A CSV cell could not be parsed.  ``row`` is the 1-based data row."""

    def __init__(self, message: str, row: int):
        super().__init__(message)
        self.row = row


class StreamError(ValueError):
    """A sample could not be processed (non-finite value, corrupt stream)."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class UndefinedAUCError(ValueError):
    """AUC requested for a label set with a single class."""


class DegenerateInputError(ValueError):
    """A statistical test received input it cannot evaluate (e.g. all-zero differences)."""
