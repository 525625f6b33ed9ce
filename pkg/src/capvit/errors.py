"""Exception types shared across the package."""


class CapvitError(Exception):
    """Base class for all package errors."""


class ShapeError(CapvitError, ValueError):
    """Operands have incompatible shapes."""


class ConfigError(CapvitError, ValueError):
    """A configuration value violates its contract."""


class DegenerateBatchError(CapvitError, ValueError):
    """A batch contains nothing to supervise or compare."""


class NumericError(CapvitError, ArithmeticError):
    """A non-finite value appeared where the math requires finite ones."""


class GraphError(CapvitError, RuntimeError):
    """Autodiff graph misuse, e.g. backward called twice on one forward."""


class VocabIndexError(CapvitError, IndexError):
    """A token id falls outside the embedding table."""


class CheckpointError(CapvitError, RuntimeError):
    """A checkpoint file is missing, truncated, or inconsistent."""
