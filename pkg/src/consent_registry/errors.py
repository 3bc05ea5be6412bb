"""Exceptions raised by the consent registry."""


class RegistryError(Exception):
    """Base class for all registry errors."""


class InvalidInputError(RegistryError, ValueError):
    """An argument violates an operation's preconditions."""


class ConfigurationError(RegistryError):
    """Settings, weights or handler names are inconsistent."""


class NotFoundError(RegistryError):
    """A content identifier or address is unknown."""


class CorruptionError(RegistryError):
    """Stored bytes no longer match their content identifier or checkpoint."""


class MalformedProvenanceError(RegistryError):
    """A provenance graph is cyclic or otherwise unusable."""


class HandlerError(RegistryError):
    """A contract handler rejected a call; its effects were rolled back."""


class InsufficientFundsError(RegistryError):
    """An account cannot cover an amount plus gas."""


class InvariantViolationError(RegistryError):
    """A benchmark or demo invariant failed."""
