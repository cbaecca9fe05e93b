class SDFNetError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(SDFNetError, ValueError):
    pass


class UsageError(SDFNetError, ValueError):
    pass


class ValidationError(SDFNetError, ValueError):
    """Bad data on disk: manifests, configs, images."""

    def __init__(self, message: str, problems: list[str] | None = None):
        self.problems = list(problems or [])
        if self.problems:
            message = message + "\n" + "\n".join(f"  {p}" for p in self.problems)
        super().__init__(message)


class ConfigError(SDFNetError, ValueError):
    pass


class ProtocolError(SDFNetError, ValueError):
    pass
