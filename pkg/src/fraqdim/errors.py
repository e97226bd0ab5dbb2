"""Exception hierarchy shared by all fraqdim modules."""


class FraqdimError(Exception):
    """Base class for every error raised by this package."""


# markov
class NegativeEntry(FraqdimError):
    pass


class RowSumNotOne(FraqdimError):
    def __init__(self, row, deviation):
        self.row = row
        self.deviation = deviation
        super().__init__(f"row {row} sums to 1{deviation:+.3e}")


class NotIrreducible(FraqdimError):
    pass


class NoConvergence(FraqdimError):
    pass


# ifs-core
class NotContractive(FraqdimError):
    pass


class NotSelfMapping(FraqdimError):
    """A map sends the ambient box outside itself."""


class DimensionMismatch(FraqdimError):
    pass


class DepthZero(FraqdimError):
    pass


class WrongCount(FraqdimError):
    pass


# symbolic
class LetterOutOfRange(FraqdimError):
    pass


class InadmissibleWord(FraqdimError):
    pass


class EpsilonOutOfRange(FraqdimError):
    pass


class DepthCapExceeded(FraqdimError):
    """Antichain construction hit its word-length cap."""


class SeedRequired(FraqdimError):
    pass


class TrajectoryTooShort(FraqdimError):
    pass


# measure
class DepthCapReached(FraqdimError):
    """Soft error: ``enclosure`` still holds a valid (wide) result."""

    def __init__(self, enclosure):
        self.enclosure = enclosure
        super().__init__(f"depth cap reached with enclosure [{enclosure.lo}, {enclosure.hi}]")


# quantizer
class NoFrostmanConstant(FraqdimError):
    pass


class BudgetTooSmall(FraqdimError):
    pass


class NotOneDimensional(FraqdimError):
    pass


class EmptyCell(FraqdimError):
    pass


class MonotonicityFailure(FraqdimError):
    pass


class SSCNotCertified(FraqdimError):
    pass


# dims
class CurveTooShort(FraqdimError):
    pass


class InsufficientResolvedRadii(FraqdimError):
    pass


# cli
class ConfigError(FraqdimError):
    """Config could not be parsed; ``field`` locates the offending entry."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class ValidatorFailed(FraqdimError):
    pass
