class BatchSimError(Exception):
    """Base class for all errors raised by batchsim."""


class ValidationError(BatchSimError, ValueError):
    pass


class TraceParseError(BatchSimError, ValueError):
    def __init__(self, path, line: int, msg: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {msg}")


class CalibrationError(BatchSimError, ValueError):
    pass


class UsageError(BatchSimError, RuntimeError):
    pass


class ConfigError(BatchSimError, ValueError):
    """Invalid scenario configuration. ``field`` names the offending key path."""

    def __init__(self, field: str, msg: str):
        self.field = field
        super().__init__(f"{field}: {msg}")
