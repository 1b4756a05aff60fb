class ContractError(ValueError):
    """An argument violates an operation's preconditions."""


class NumericalError(ArithmeticError):
    """A matrix decomposition failed to converge."""


class CapacityError(ValueError):
    """A combinatorial enumeration would be too large to materialise."""


class FormatError(ValueError):
    """A data file does not match its declared binary format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(ValueError):
    """A configuration file or override could not be parsed."""

    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.key = key
