"""Exception types shared across the package."""


class ClpdError(Exception):
    """Base class for package errors."""


class ConfigError(ClpdError):
    """Invalid configuration value or experiment config file (CLI exit 2)."""


class MissingArtifactError(ClpdError):
    """A required upstream artifact is absent (CLI exit 3)."""


class DataFormatError(ClpdError):
    """Malformed record in a dataset / corpus / curriculum file."""


class InvariantError(ClpdError):
    """A structural invariant of a domain object is violated."""
