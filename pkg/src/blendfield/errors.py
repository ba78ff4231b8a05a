"""Exception types shared across the package."""


class BlendFieldError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(BlendFieldError, ValueError):
    """A configuration value violates its documented constraints."""


class ShapeError(BlendFieldError, ValueError):
    """An array argument has the wrong length or shape."""


class DomainError(BlendFieldError, ValueError):
    """An input value lies outside the operation's domain."""


class NumericError(BlendFieldError, FloatingPointError):
    """A non-finite value appeared where finite math was required."""


class StateError(BlendFieldError, RuntimeError):
    """An operation was called before its required state existed."""


class DatasetError(BlendFieldError, ValueError):
    """A dataset directory or manifest could not be loaded."""


class CheckpointError(BlendFieldError, ValueError):
    """A checkpoint file is missing, corrupt, or unsupported."""
