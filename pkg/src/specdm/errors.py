"""Exception hierarchy shared across the package."""


class SpecDMError(Exception):
    """Base class for all package errors."""


class ValidationError(SpecDMError, ValueError):
    """Input violates a documented precondition."""


class DatasetFormatError(SpecDMError):
    """On-disk container cannot be decoded.

    ``code`` is a stable machine-readable identifier for the failure kind.
    """

    code = "format"


class BadMagicError(DatasetFormatError):
    code = "bad_magic"


class VersionMismatchError(DatasetFormatError):
    code = "version_mismatch"


class ChecksumError(DatasetFormatError):
    code = "checksum"


class TruncatedFileError(DatasetFormatError):
    code = "truncated"


class TrainingDivergedError(SpecDMError, RuntimeError):
    """A loss became non-finite during optimisation."""


class ConfigError(ValidationError):
    """Run configuration does not match the schema."""
