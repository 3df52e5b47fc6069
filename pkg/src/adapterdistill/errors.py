"""Exception hierarchy shared by all modules."""


class AdapterDistillError(Exception):
    """Base class for all package errors."""


class DimensionError(AdapterDistillError):
    """Shapes or dimensions do not agree."""


class ConfigurationError(AdapterDistillError):
    """A configuration value is out of its legal range."""


class UsageError(AdapterDistillError):
    """An operation was called outside its contract."""


class FormatError(AdapterDistillError):
    """A serialized artifact has a malformed header or layout."""


class IntegrityError(AdapterDistillError):
    """Artifact bytes do not match their recorded hash."""


class NotFoundError(AdapterDistillError):
    """A named tenant or artifact does not exist."""


class ConflictError(AdapterDistillError):
    """A unique name is already taken."""


class OracleError(AdapterDistillError):
    """A verification oracle detected an inconsistent function under test."""
