"""Exception hierarchy shared by all bmdrkit modules."""


class BmdrError(Exception):
    """Base class for every error raised by bmdrkit."""


class DataError(BmdrError):
    """Malformed, inconsistent or unreadable input data (CLI exit code 2)."""


class NumericError(BmdrError):
    """A numerical precondition failed (CLI exit code 3)."""


class NonFiniteInput(NumericError):
    pass


class RankDeficient(NumericError):
    pass


class Singular(NumericError):
    pass


class NotPositiveDefinite(NumericError):
    pass


class EncodingSingular(NumericError):
    pass


class ShapeMismatch(DataError):
    pass


class UnsupportedOrder(DataError):
    pass


class TooLarge(DataError):
    pass


class EmptySet(DataError):
    pass


class InsufficientChannels(DataError):
    def __init__(self, message, selected=None, shortfall=None):
        super().__init__(message)
        self.selected = selected
        self.shortfall = shortfall


class BadMagic(DataError):
    pass


class VersionMismatch(DataError):
    pass


class TruncatedFile(DataError):
    pass


class ArchMismatch(DataError):
    pass


class BadFractions(DataError):
    pass


class DivisionByZeroLabel(DataError):
    pass


class ParseError(DataError):
    pass


class InconsistentAdjacency(DataError):
    pass


class LengthMismatch(DataError):
    pass


class BudgetMismatch(DataError):
    pass


class WindowTooLong(DataError):
    pass


class EmptyInput(DataError):
    pass


class ConfigError(DataError):
    pass


class OracleFailure(BmdrError):
    pass
