"""Exception hierarchy shared by every module."""


class AfgrlError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(AfgrlError, ValueError):
    """Operand shapes do not line up."""


class GraphFormatError(AfgrlError, ValueError):
    """An input graph file could not be parsed."""


class ConfigError(AfgrlError, ValueError):
    """A configuration file or value is invalid."""


class NumericalError(AfgrlError, FloatingPointError):
    """A non-finite value appeared in a forward pass or loss."""
