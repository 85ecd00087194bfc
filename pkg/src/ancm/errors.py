"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class DegenerateInputError(ValueError):
    """Input is outside the domain where an operation is defined."""


class ParseError(ValueError):
    """Malformed binary or text file.

    ``offset`` is the byte offset at which the problem was detected.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConsistencyError(ValueError):
    """Two inputs that must agree do not (e.g. image and label counts)."""


class ConfigError(ValueError):
    """Invalid run configuration."""


class NumericalAbort(RuntimeError):
    """Training produced a non-finite value."""

    def __init__(self, message, epoch=None, batch=None, layer=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.layer = layer
