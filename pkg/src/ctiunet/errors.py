"""Shared exception types."""


class ConfigurationError(ValueError):
    """A shape, channel-count, or config mismatch detected before any compute."""


class HarnessError(RuntimeError):
    """A verification or optimizer harness was used incorrectly (e.g. stepping
    on unpopulated gradients, or grad-checking a non-deterministic function)."""
