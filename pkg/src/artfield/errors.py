"""Exception types shared across the pipeline (the CLI maps them to exit codes)."""


class DataFormatError(ValueError):
    """Malformed or inconsistent input files."""


class CheckpointFormatError(DataFormatError):
    pass


class CheckpointVersionError(CheckpointFormatError):
    def __init__(self, found: int, expected: int):
        self.found, self.expected = found, expected
        super().__init__(f"checkpoint format version {found} is not supported (expected {expected})")


class NumericalError(FloatingPointError):
    """Optimization produced non-finite values or could not make progress."""

    def __init__(self, message: str, dump: dict | None = None):
        self.dump = dump or {}
        super().__init__(message)
