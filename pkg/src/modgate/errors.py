"""Exception types shared across the package.

The CLI maps these onto exit codes, so the split matters: configuration
problems, malformed files, and model/data mismatches are different failure
modes and should not be collapsed into one generic error.
"""


class ModgateError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(ModgateError):
    """Invalid or inconsistent run configuration."""


class InputError(ModgateError):
    """Structurally valid input that cannot be processed (e.g. empty dataset)."""


class DataFormatError(ModgateError):
    """Malformed dataset or checkpoint file; message names the byte offset."""


class MismatchError(ModgateError):
    """Dataset, checkpoint, and configuration disagree about shapes or counts."""


class DimensionError(ValueError):
    """Tensor shapes incompatible with the requested operation."""


class DomainError(ValueError):
    """Numeric domain violation (log of non-positive, overflow, bad tau)."""


class ContractError(RuntimeError):
    """An API precondition was violated by the caller."""
