"""Exception hierarchy shared by the services and the command surface."""


class RsrDiffError(Exception):
    """Base class for data and validation failures (CLI exit code 2)."""


class ShapeMismatchError(RsrDiffError, ValueError):
    def __init__(self, what: str, left: tuple, right: tuple):
        super().__init__(f"{what}: shape {left} does not match {right}")
        self.left = left
        self.right = right


class ScheduleError(RsrDiffError, ValueError):
    """Invalid timestep, schedule or sub-schedule request."""


class NonFiniteError(RsrDiffError, ArithmeticError):
    """A NaN or infinity appeared in an image, activation or gradient."""

    def __init__(self, message: str, k: int | None = None):
        if k is not None:
            message = f"{message} (reverse step k={k})"
        super().__init__(message)
        self.k = k


class CorruptFileError(RsrDiffError):
    """Malformed header, truncated payload or otherwise unreadable file."""


class ChecksumError(CorruptFileError):
    """Stored checksum does not match the file contents."""


class ConfigMismatchError(RsrDiffError):
    """Checkpoint configuration disagrees with what the caller asked for."""

    def __init__(self, expected: str, found: str):
        super().__init__(
            f"Checkpoint holds the '{found}' variant but '{expected}' was requested"
        )
        self.expected = expected
        self.found = found


class StageError(RsrDiffError):
    """An experiment stage failed; wraps the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"Experiment stage '{stage}' failed: {cause}")
        self.stage = stage


class ConfigFileError(RsrDiffError, ValueError):
    """Malformed line or repeated key in a flat config file."""
