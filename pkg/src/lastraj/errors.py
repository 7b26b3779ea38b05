"""Exception hierarchy shared by every module."""


class LastrajError(Exception):
    """Base class for all package errors."""


class ConfigError(LastrajError):
    """Invalid or missing configuration value."""


class ValidationError(LastrajError):
    """Data violates a declared invariant."""


class ParseError(ValidationError):
    """A line of an input file could not be parsed."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class ArgumentError(LastrajError, ValueError):
    """A function received an argument outside its domain."""


class CapacityError(LastrajError):
    """Problem instance exceeds what an exact solver is allowed to handle."""


class IntegrityError(LastrajError):
    """Artifacts on disk do not match their manifest."""


class NumericalAbort(LastrajError):
    """Training produced a non-finite loss."""

    def __init__(self, message, dump_path=None):
        self.dump_path = dump_path
        super().__init__(message if dump_path is None else f"{message} (diagnostics: {dump_path})")
