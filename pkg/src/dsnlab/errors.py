class DsnError(Exception):
    """Base class for dsnlab errors."""


class ContractError(DsnError, ValueError):
    """A precondition on shapes, ranges or arguments was violated."""


class ConfigError(DsnError):
    """Invalid or inconsistent configuration."""


class FormatError(DsnError):
    """A binary file could not be parsed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
