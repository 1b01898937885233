"""Exception taxonomy shared across the package.

The CLI maps these onto its exit-code contract: configuration/usage and
data-validation problems exit 2, I/O failures exit 3, missing or corrupt
persisted state exits 4, and non-finite numerics exit 5.
"""


class LdsegError(Exception):
    """Base class for all package errors."""


class ConfigError(LdsegError):
    """Invalid static configuration (bad flag values, impossible sizes)."""


class ContractError(LdsegError):
    """Runtime contract violation: mismatched shapes, bad ranges, bad ids."""


class InputError(LdsegError):
    """Degenerate or unusable per-call input (e.g. a label map with no classes)."""


class DataError(LdsegError):
    """Dataset layout or content failed validation."""


class StateError(LdsegError):
    """Missing or corrupt persisted training state (checkpoints)."""


class NumericError(LdsegError):
    """A loss or update became non-finite; training must stop."""


class MetricError(LdsegError):
    """A requested metric is undefined for the accumulated data."""


class DegenerateBatchWarning(UserWarning):
    """Signals a batch that contributes no learning signal (e.g. all-ignore)."""
