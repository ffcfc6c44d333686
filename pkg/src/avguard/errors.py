"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration (bad ranges, inconsistent sections, ...)."""


class InputError(ValueError):
    """Rejected operation input (non-finite state, shape mismatch, ...)."""


class TrainingDiverged(RuntimeError):
    """Training loss became non-finite."""


class ChainError(RuntimeError):
    """Ledger integrity failure."""
