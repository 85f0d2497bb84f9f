"""Exception types shared across the package."""


class VXCError(Exception):
    """Base class for all package errors."""


class DimensionError(VXCError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(VXCError, ValueError):
    """A layer or model was configured with impossible hyperparameters."""


class UsageError(VXCError, RuntimeError):
    """An API was called in a way its contract forbids."""


class DomainError(VXCError, ValueError):
    """An input value lies outside the documented domain."""


class FormatError(VXCError, ValueError):
    """A serialized file or byte payload is malformed or inconsistent."""


class NonFiniteLossError(VXCError, FloatingPointError):
    """Training produced a NaN or infinite loss."""
