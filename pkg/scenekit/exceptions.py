class ScenekitError(Exception):
    """Base class for every error raised by scenekit."""


class ConfigError(ScenekitError, ValueError):
    """An argument or configuration value is invalid."""


class EmptyDataError(ScenekitError, ValueError):
    """The data needed for an operation is empty (no labeled pixels,
    no ensemble members, an empty transfer set, ...)."""


class FormatError(ScenekitError):
    """A file on disk is malformed, truncated or of an unsupported version."""


class DataWarning(UserWarning):
    """Category used with `warnings.warn` for recoverable data problems."""
