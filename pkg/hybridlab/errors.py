"""
Exception types raised across hybridlab.

Every error carries the exit code the command-line interface returns when it
escapes a command.
"""


class HybridLabError(Exception):
    """Base class for all errors raised by hybridlab."""
    exit_code = 1


class ConfigError(HybridLabError):
    """Invalid configuration value, plan or hyperparameter."""
    exit_code = 1


class DimensionError(HybridLabError, ValueError):
    """Tensor shapes that cannot be combined."""
    exit_code = 1


class StateError(HybridLabError, RuntimeError):
    """A call out of order, such as a backward pass without its forward pass."""
    exit_code = 1


class DataError(HybridLabError):
    """Dataset content that violates a pipeline precondition."""
    exit_code = 2


class ItemError(DataError):
    """A single dataset file that could not be read."""

    def __init__(self, path, cause):
        super().__init__(f"Could not read '{path}': {cause}")
        self.path = path


class StorageError(HybridLabError, OSError):
    """A file that is truncated or cannot be written."""
    exit_code = 2


class FormatError(HybridLabError):
    """A checkpoint with the wrong magic or format version."""
    exit_code = 2


class NumericError(HybridLabError, ArithmeticError):
    """A non-finite value where a finite one is required."""
    exit_code = 3
