"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """An operation was called outside its contract (bad argument, bad state)."""


class DataError(ValueError):
    """Dataset content violates a requirement (unlabeled pixel, empty class, ...)."""


class ConfigError(ValueError):
    """Configuration values are inconsistent with each other or with the data."""


class FormatError(Exception):
    """A binary file does not conform to its format.

    ``offset`` is the byte position at which the violation was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DivergenceError(RuntimeError):
    """A numeric computation produced non-finite values."""

    def __init__(self, message: str, **context):
        detail = ", ".join(f"{k}={v}" for k, v in context.items())
        super().__init__(f"{message} [{detail}]" if detail else message)
        self.context = context
