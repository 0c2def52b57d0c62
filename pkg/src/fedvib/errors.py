"""Exception types shared across the package."""


class FedvibError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(FedvibError, ValueError):
    """Invalid configuration value or combination."""


class ShapeError(FedvibError, ValueError):
    """Array shape or layout does not match what an operation requires."""


class IngestionError(FedvibError, ValueError):
    """A data file could not be parsed.

    Carries the offending path and, when known, the 1-based line number.
    """

    def __init__(self, message, path=None, line=None):
        detail = message
        if path is not None:
            detail = f"{path}: {detail}" if line is None else f"{path}:{line}: {detail}"
        super().__init__(detail)
        self.path = path
        self.line = line


class WireError(FedvibError, ValueError):
    """Malformed wire bytes.  ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class ProtocolError(FedvibError, RuntimeError):
    """Federation state machine violation (premature aggregation, duplicate id, ...)."""


class RoundAbortError(ProtocolError):
    """A federation round could not complete (timeout or participant failure)."""


class TransportError(FedvibError, RuntimeError):
    """Transport-level failure (closed channel, connection loss)."""


class NumericsError(FedvibError, ArithmeticError):
    """Non-finite values appeared where finiteness is guaranteed."""
