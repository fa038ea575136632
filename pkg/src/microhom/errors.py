"""Shared exception types."""


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


class SolveError(RuntimeError):
    """A linear solve failed to reach its tolerance within budget."""
