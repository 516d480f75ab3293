"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors -> 1, data/config
errors -> 2, numerical failures -> 3.
"""


class ShapeError(ValueError):
    """Tensor dimensions incompatible with the requested operation."""


class ValidationError(ValueError):
    """Input violates a documented precondition (e.g. non-binary mask)."""


class GraphError(RuntimeError):
    """Autodiff contract violation (non-scalar loss, missing gradient)."""


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


class DataError(ValueError):
    """Dataset or file-format problem."""


class CheckpointError(DataError):
    """Corrupt, truncated or incompatible checkpoint container."""


class NumericalError(RuntimeError):
    """Training diverged (NaN/Inf loss) or produced non-finite values."""
