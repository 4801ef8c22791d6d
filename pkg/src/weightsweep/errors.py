"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
NoSupportError / InsufficientDataError -> 3, TrainingDivergedError -> 4.
"""


class WeightSweepError(Exception):
    """Base class for package errors."""


class ConfigError(WeightSweepError):
    """Invalid or inconsistent configuration."""


class NoSupportError(WeightSweepError):
    """An off-policy estimate has zero hit events (no logged support)."""


class InsufficientDataError(WeightSweepError):
    """Not enough records/users to run the requested computation."""


class GridMismatchError(WeightSweepError):
    """A checkpoint was trained against a different action grid."""


class TrainingDivergedError(WeightSweepError):
    """Training loss became non-finite."""

    def __init__(self, message, last_good_params=None):
        super().__init__(message)
        self.last_good_params = last_good_params


class InferenceFailure(WeightSweepError):
    """Value-model inference produced non-finite outputs."""
