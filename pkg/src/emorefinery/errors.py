"""Exception types shared across the package.

The CLI maps each category to a distinct exit code, so errors raised by
library code should use (or subclass) one of these.
"""


class EmoRefineryError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EmoRefineryError):
    """Invalid configuration: bad hyperparameters, malformed config files,
    inconsistent specs (e.g. a mel filter with no FFT bins)."""


class DataError(EmoRefineryError):
    """Invalid or unusable data: too-short utterances, malformed manifests,
    corrupt or unsupported audio files."""


class TrainingDivergedError(EmoRefineryError):
    """Non-finite loss encountered during training."""
