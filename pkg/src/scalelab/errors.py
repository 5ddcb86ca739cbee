"""Exception hierarchy shared by every scalelab module."""


class ScaleLabError(Exception):
    """Base class for all errors raised by scalelab."""


class ShapeError(ScaleLabError, ValueError):
    """Operands or layer chains whose shapes do not conform."""


class InvalidShapeError(ShapeError):
    """A dimension list containing zero or negative entries."""


class InvalidRangeError(ScaleLabError, ValueError):
    pass


class InvalidRateError(ScaleLabError, ValueError):
    pass


class InvalidFactorError(ScaleLabError, ValueError):
    pass


class InvalidBatchError(ScaleLabError, ValueError):
    pass


class InvalidLabelError(ScaleLabError, ValueError):
    pass


class InvalidDataError(ScaleLabError, ValueError):
    """Empty datasets, single-class ROC input, bad splits and similar."""


class NumericError(ScaleLabError, ArithmeticError):
    pass


class StateError(ScaleLabError, RuntimeError):
    """An operation called out of order, e.g. backward before forward."""


class ParseError(ScaleLabError, ValueError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")


class ModelFileError(ScaleLabError, IOError):
    """Base class for model file load failures."""


class BadMagicError(ModelFileError):
    pass


class VersionError(ModelFileError):
    def __init__(self, found, expected):
        self.found = found
        self.expected = expected
        super().__init__(f"model file version {found} is not supported (expected {expected})")


class TruncatedFileError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class DecodeError(ScaleLabError, ValueError):
    """An image file that cannot be decoded."""
