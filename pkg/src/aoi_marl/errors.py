"""Shared exception types."""


class ContractViolation(Exception):
    """An operation was called with arguments that break its contract."""


class ShapeMismatch(ContractViolation):
    """Stored parameters or inputs do not match the expected shapes."""


class ConfigError(Exception):
    """A config file is malformed; the message names the offending key."""
