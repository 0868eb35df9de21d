"""Exception types shared across the package."""


class IpdLabError(Exception):
    """Base class for all package errors."""


class ContractViolationError(IpdLabError):
    """An internal contract was violated (bad distribution, length mismatch, ...)."""


class ConfigError(IpdLabError):
    """Invalid or incomplete configuration."""


class PreconditionError(IpdLabError):
    """A required input artifact (checkpoint, dataset, ...) is missing or unusable."""


class NonFiniteLossError(IpdLabError):
    """A loss evaluated to NaN/Inf; carries the offending batch/step when known."""

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


class CheckpointVersionError(IpdLabError):
    """Checkpoint was written by an incompatible format version."""


class CheckpointCorruptError(IpdLabError):
    """Checkpoint file is unreadable or fails integrity checks."""
