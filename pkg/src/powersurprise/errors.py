"""Exception classes shared across the package.

The CLI maps these onto distinct exit codes, so raising the right class
matters for scripting: ConfigError -> 1, DataFormatError -> 2,
NumericError -> 3, InsufficientDataError -> 4.
"""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or out of range."""


class DataFormatError(ValueError):
    """Input data could not be read or parsed."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite or otherwise invalid value."""


class InsufficientDataError(ValueError):
    """Not enough data to perform the requested analysis."""


class AbsoluteContinuityError(NumericError):
    """KL divergence requested where q(x) = 0 but p(x) > 0 and flooring is off."""
