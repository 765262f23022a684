"""Exception types shared across the package."""


class StarcdError(Exception):
    """Base class for all starcd errors."""


class ContractError(StarcdError, ValueError):
    """An operation was called with arguments violating its contract
    (shape mismatch, invalid hyperparameters, missing outputs)."""


class InvalidBatchError(ContractError):
    """Batch too small to build pseudo-pairs (needs n >= 2)."""


class ConfigError(StarcdError, ValueError):
    """Invalid run configuration (bad values, unknown keys, missing files)."""


class IngestionError(StarcdError, ValueError):
    """Dataset on disk violates the expected layout or value contract."""


class TrainingDivergedError(StarcdError, RuntimeError):
    """Loss became non-finite during optimization."""
