"""Exception types shared across the toolkit."""


class JndError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(JndError):
    """Tensor or image shapes do not match the operation's contract."""


class InputError(JndError):
    """Caller supplied invalid data (empty dataset, out-of-range pixels, ...)."""


class ConfigurationError(JndError):
    """Invalid configuration value (unknown loss kind, bad attack mode, ...)."""


class FormatError(JndError):
    """On-disk artifact is malformed (bad magic, version, truncation, ...)."""


class NumericalError(JndError):
    """A computation produced non-finite values or a divergent step."""
