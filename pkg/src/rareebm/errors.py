"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid problem or experiment configuration."""


class NumericError(ArithmeticError):
    """A numeric computation could not be carried out reliably."""


class EstimationError(NumericError):
    """Density or probability estimation failed (degenerate inputs)."""


class TrainingError(NumericError):
    """Bias-potential optimization diverged or received invalid input."""
