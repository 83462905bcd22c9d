class ConfigError(ValueError):
    """A configuration value is invalid. ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class NonFiniteError(ValueError):
    """A loss, score or gradient was NaN or infinite."""


class TraceFormatError(ValueError):
    """A trace file row could not be parsed. ``line`` is 1-based."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")
