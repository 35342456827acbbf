"""Exception types for gp-ada."""

from typing import Optional


class GpAdaError(Exception):
    """Base class for every error the CLI reports."""


class DatasetError(GpAdaError):
    """Dataset violates one of its invariants."""


class DatasetParseError(DatasetError):
    """Dataset CSV could not be parsed."""

    def __init__(self, message: str, path: str, row: Optional[int] = None):
        """Initialize the parse error.

        Args:
            message: What went wrong.
            path: File being parsed.
            row: 1-based line number in the file, header included.
        """
        self.path = path
        self.row = row
        where = f"{path}:{row}" if row is not None else path
        super().__init__(f"{where}: {message}")


class ConfigError(GpAdaError):
    """Configuration key, value or combination is invalid."""


class PoolError(GpAdaError):
    """An operation would break the source/target pool partition."""


class BudgetError(PoolError):
    """An oracle query would exceed the label budget."""


class FactorizationError(GpAdaError):
    """Cholesky factorization failed even at the largest jitter."""

    def __init__(self, class_id: Optional[int], jitter: float):
        self.class_id = class_id
        self.jitter = jitter
        super().__init__(
            f"Cholesky factorization failed for class {class_id} (last jitter {jitter:g})"
        )


class TrainingDivergenceError(GpAdaError):
    """A gradient or parameter became non-finite."""


class EvaluationError(GpAdaError):
    """Accuracy was requested on an empty split."""


class MetricsFormatError(GpAdaError):
    """A RoundMetrics CSV is malformed."""


class CheckpointError(GpAdaError):
    """A model checkpoint file is malformed."""
