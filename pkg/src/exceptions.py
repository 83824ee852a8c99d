"""
Exception hierarchy for the X-ray DPN-SE toolkit.

Each error also derives from the closest builtin so callers may catch either.
"""


class XrayDpnError(Exception):
    """Base class for toolkit errors."""


class DimensionError(XrayDpnError, ValueError):
    """Tensor or image shapes do not fit the operation."""


class ConfigError(XrayDpnError, ValueError):
    """A configuration value or combination is invalid."""


class InputError(XrayDpnError, ValueError):
    """User-supplied data (labels, images, manifests) is invalid."""


class UsageError(XrayDpnError, RuntimeError):
    """An API was called in the wrong state."""


class NumericalError(XrayDpnError, ArithmeticError):
    """A computation produced non-finite values."""
