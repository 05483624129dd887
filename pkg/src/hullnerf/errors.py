"""Exception types shared across the toolkit."""


class HullNerfError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(HullNerfError):
    """Bad configuration value or unusable combination of options."""


class ValidationError(HullNerfError):
    """Input data violates a documented precondition or invariant."""


class DatasetFormatError(HullNerfError):
    """Dataset directory or manifest is missing or malformed."""


class FormatError(HullNerfError):
    """Binary artifact (grid / checkpoint) has a bad magic, version or size."""


class CapacityError(HullNerfError):
    """A packed batch overflowed its slot capacity.

    Carries ``observed_max`` so the caller can recalibrate.
    """

    def __init__(self, message: str, observed_max: int, capacity: int):
        super().__init__(message)
        self.observed_max = observed_max
        self.capacity = capacity


class TrainingError(HullNerfError):
    """Training diverged or hit an unrecoverable state.

    Carries the iteration and seed needed to reproduce the failing batch.
    """

    def __init__(self, message: str, iteration: int | None = None,
                 seed: int | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.seed = seed
