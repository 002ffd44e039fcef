"""Exception hierarchy shared across the package."""


class PmfnetError(Exception):
    """Base class for all package errors."""


class ShapeError(PmfnetError):
    """Operand shapes or dtypes are incompatible with an operation."""


class ConfigError(PmfnetError):
    """A configuration file or value is invalid."""


class DataError(PmfnetError):
    """A sample, dataset, or checkpoint on disk is invalid."""


class NumericsError(PmfnetError):
    """A computation produced a non-finite value or failed verification."""


class MetricError(PmfnetError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class PmftError(DataError):
    """Base class for tensor-file format errors."""


class PmftMagicError(PmftError):
    """The magic bytes at the start of the file are wrong."""


class PmftVersionError(PmftError):
    """The version byte is unsupported."""


class PmftDtypeError(PmftError):
    """The dtype byte does not name a supported dtype."""


class PmftTruncatedError(PmftError):
    """The file ends before the header or payload is complete."""
