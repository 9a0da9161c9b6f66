"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the operation's admissible domain."""


class ShapeError(ValueError):
    """Mismatched grids, array shapes, or vector dimensions."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to converge within its iteration budget."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class RankError(ValueError):
    """A sample matrix is rank-deficient for the requested dimension."""

    def __init__(self, message, rank):
        super().__init__(message)
        self.rank = rank


class FileFormatError(ValueError):
    """Base class for file parsing/serialization failures."""


class PgmFormatError(FileFormatError):
    """File does not carry a PGM magic number."""


class PgmParseError(FileFormatError):
    """Malformed PGM header; carries the byte offset of the failure."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class FieldFileError(FileFormatError):
    """Base class for MFLD field-file failures."""


class BadMagicError(FieldFileError):
    pass


class BadVersionError(FieldFileError):
    pass


class TruncatedPayloadError(FieldFileError):
    pass


class UnsupportedChannelsError(FieldFileError):
    pass


class NonFiniteDataError(FieldFileError):
    pass
