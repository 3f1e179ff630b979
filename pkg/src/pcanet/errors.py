class ConfigError(ValueError):
    """Invalid configuration value or key."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed, truncated, or from another format version."""
