"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or flag combination."""


class DataError(ValueError):
    """Malformed dataset content or numerically unusable input."""


class CheckpointMismatchError(ValueError):
    """Checkpoint incompatible with the requested model configuration."""


class EvaluationError(ValueError):
    """Hypothesis/reference files unusable for corpus scoring."""
