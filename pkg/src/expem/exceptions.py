"""Exception types raised by :mod:`expem`."""


class ExpEMError(Exception):
    """Base class for all package errors."""


class DomainError(ExpEMError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class UnsupportedModelError(ExpEMError, ValueError):
    """The operation is only defined for a narrower family of models."""


class PreconditionError(ExpEMError, ValueError):
    """A documented precondition (e.g. a step-size bound) does not hold."""


class ConfigError(ExpEMError, ValueError):
    """Malformed or inconsistent experiment configuration."""
