"""Exceptions raised by gait-ssa outside of the worker pool.

Worker failures have their own :class:`BrokenWorkerError` in ``_abc``."""


class DatasetFormatError(ValueError):
    """Raised when a dataset directory does not match the on-disk format.

    Every failure mode has its own subclass so callers (and the command line)
    can tell a missing file apart from a corrupt one."""


class MissingDatasetFileError(FileNotFoundError, DatasetFormatError):
    """A file required by the dataset format is absent."""


class ShapeMismatchError(DatasetFormatError):
    """The payload size disagrees with the shape recorded in ``meta.json``."""


class NonFiniteDataError(DatasetFormatError):
    """The payload holds NaN or infinite coordinates."""


class SchemaVersionError(DatasetFormatError):
    """``meta.json`` declares a schema version this release cannot read."""


class CorruptMetadataError(DatasetFormatError):
    """``meta.json`` is not a JSON object, or a field in it is missing or invalid."""


class InvalidLabelError(DatasetFormatError):
    """A label is neither an emotion class nor the unlabeled marker 255."""


class MissingLabelsError(ValueError):
    """An operation that needs emotion labels got an unlabeled dataset."""


class EmptyBankError(ValueError):
    """A contrastive loss was evaluated against an empty memory bank."""


class NonFiniteLossError(FloatingPointError):
    """A pretraining step produced a NaN or infinite loss.

    The step is aborted before any parameter or memory bank update, and the
    batch-norm statistics of both encoders are restored. The
    offending loss components are available as :attr:`components`."""

    def __init__(self, message, components=None):
        super().__init__(message)
        self.components = dict(components or {})


class ConfigError(ValueError):
    """A run configuration is invalid or refers to inputs that do not exist."""


class CheckpointFormatError(ValueError):
    """A checkpoint directory is corrupt or was written by an unknown version."""
