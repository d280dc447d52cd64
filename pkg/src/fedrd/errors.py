"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class NumericalError(FloatingPointError):
    """A NaN or infinity showed up where only finite values are allowed."""
