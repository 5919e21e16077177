from .tensor import ShapeError


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class AudioError(ValueError):
    """Unusable audio input (too short, silent, wrong encoding)."""


__all__ = ["ShapeError", "ConfigError", "AudioError"]
