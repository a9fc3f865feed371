"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies.
"""


class LearnedBpError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(LearnedBpError):
    """Invalid configuration: bad geometry, parameters, or config files."""


class ShapeMismatchError(LearnedBpError):
    """Arrays with inconsistent shapes were combined."""


class FormatError(LearnedBpError):
    """A file's contents do not conform to its declared format."""


class DivergenceError(LearnedBpError):
    """Training produced a non-finite loss."""
