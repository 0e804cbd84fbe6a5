"""Exception hierarchy shared by all modules."""


class ZoneIDSError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatchError(ZoneIDSError, ValueError):
    pass


class CongruenceError(ZoneIDSError, ValueError):
    """Two parameter sets differ in names, order or shapes."""


class NonFiniteLossError(ZoneIDSError, FloatingPointError):
    pass


class SingleClassError(ZoneIDSError, ValueError):
    pass


class DomainError(ZoneIDSError, ValueError):
    pass


class EmptyUpdateSetError(ZoneIDSError, ValueError):
    pass


class EmptyEvaluationError(ZoneIDSError, ValueError):
    pass


class MissingColumnError(ZoneIDSError, KeyError):
    pass


class EmptyDatasetError(ZoneIDSError, ValueError):
    pass


class SchemaViolationError(ZoneIDSError, ValueError):
    pass


class ScalerMissingError(ZoneIDSError, RuntimeError):
    pass


class FamilyNotFoundError(ZoneIDSError, KeyError):
    pass


class ConfigError(ZoneIDSError, ValueError):
    pass
