"""Exception types raised by mmlink."""


class MmlinkError(Exception):
    """Base class for mmlink errors."""


class ConfigError(MmlinkError, ValueError):
    """Scenario file could not be parsed or violates an invariant."""

    def __init__(self, message: str, path: str = None, line: int = None):
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line


class InfeasibleActionError(MmlinkError, ValueError):
    """Action violates the half-duplex or tracking constraints."""


class CheckpointError(MmlinkError, RuntimeError):
    """Checkpoint header, kind or architecture does not match."""
