"""Exception hierarchy. The CLI maps each family to an exit code."""


class DialError(Exception):
    exit_code = 1


class ConfigError(DialError, ValueError):
    exit_code = 2


class DataError(DialError, ValueError):
    exit_code = 3


class SchemaError(DataError):
    pass


class ProviderError(DialError, RuntimeError):
    exit_code = 4


class ShapeError(DialError, ValueError):
    exit_code = 2


class RoutingError(ConfigError):
    pass


class MaskError(DialError, ValueError):
    """A softmax row had no allowed entries."""
