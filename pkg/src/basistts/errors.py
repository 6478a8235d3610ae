"""Exception hierarchy shared across the package.

Each class maps to a CLI exit code (see cli.EXIT_CODES): configuration
problems exit 2, data/format problems exit 3, numerical failures exit 4.
"""


class BasisTTSError(Exception):
    """Base class for all package errors."""


class DimensionError(BasisTTSError):
    """Shapes of operands do not agree."""


class ConfigurationError(BasisTTSError):
    """Invalid configuration or invalid request (bad N, empty corpus, ...)."""


class DataError(BasisTTSError):
    """Invalid data values (zero duration, out-of-vocab token, ...)."""


class FormatError(BasisTTSError):
    """Malformed file on disk (bad magic, truncation, CRC mismatch)."""


class EvaluationError(BasisTTSError):
    """Numerical failure: non-finite values where finite ones are required."""


class DegenerateBasisError(BasisTTSError):
    """A basis vector or embedding is the zero vector where cosine is needed."""
