"""Exception types raised across the package."""


class FetrError(Exception):
    pass


class DimensionError(FetrError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DegenerateBatchError(FetrError, ValueError):
    """Batch statistics requested over fewer than two values."""


class ContractError(FetrError, ValueError):
    """A caller-side precondition was violated."""


class DataError(FetrError, ValueError):
    pass


class DecodeError(DataError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ConfigError(FetrError, ValueError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class ResourceError(FetrError, RuntimeError):
    pass


class CheckpointError(FetrError, ValueError):
    pass


class NonFiniteGradientError(FetrError, FloatingPointError):
    def __init__(self, name, count):
        self.name = name
        self.count = count
        super().__init__(f"non-finite gradient in parameter {name!r} ({count} entries)")
