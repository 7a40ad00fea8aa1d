"""Exception types shared across the package.

Each class carries the process exit code the command-line driver reports
when the error escapes a subcommand.
"""


class ReconError(Exception):
    exit_code = 1


class ConfigError(ReconError, ValueError):
    """Invalid configuration value or incompatible settings."""

    exit_code = 2


class DimensionError(ReconError, ValueError):
    """Array extents do not agree."""

    exit_code = 2


class UnsupportedSizeError(DimensionError):
    """Transform extent the FFT does not handle (non power of two)."""


class CoverageError(ReconError, ValueError):
    """Merged frames leave some phase-encode lines unsampled."""

    exit_code = 2

    def __init__(self, missing_lines):
        self.missing_lines = list(missing_lines)
        super().__init__(
            "incomplete k-space coverage; unsampled ky lines: "
            + ", ".join(str(i) for i in self.missing_lines)
        )


class NumericalError(ReconError, ArithmeticError):
    """NaN/Inf encountered, or an iterative solver failed to make progress."""

    exit_code = 3


class StorageError(ReconError, OSError):
    """A file cannot be read or written."""

    exit_code = 4


class CheckpointError(StorageError):
    """A checkpoint or dataset on disk is missing, malformed or incompatible."""
