"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class ShapeMismatchError(ValidationError):
    """Operands have incompatible shapes."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class DatasetError(OSError):
    """Dataset files are missing, truncated, or inconsistent."""


class CheckpointError(OSError):
    """Checkpoint directory is missing, corrupt, or version-incompatible."""
