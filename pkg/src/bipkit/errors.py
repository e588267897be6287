"""Exception hierarchy shared by all bipkit modules."""


class BipError(Exception):
    """Base class for every error raised by bipkit."""


class DomainError(BipError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ConfigError(BipError, ValueError):
    pass


# -- file formats ---------------------------------------------------------

class FormatError(BipError, ValueError):
    """Malformed or inconsistent embedding file."""


class BadMagic(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class TruncatedData(FormatError):
    pass


class NonUnitRow(FormatError):
    def __init__(self, row, norm):
        super().__init__(f"row {row} has L2 norm {norm:.9g}, expected 1")
        self.row = row
        self.norm = norm


# -- embedding store ------------------------------------------------------

class EmptyMatrix(BipError, ValueError):
    pass


class ZeroNormCentroid(BipError, ArithmeticError):
    pass


# -- pca ------------------------------------------------------------------

class InsufficientData(BipError, ValueError):
    pass


class ZeroVariance(BipError, ArithmeticError):
    pass


# -- allocator ------------------------------------------------------------

class GalleryTooSmall(BipError, ValueError):
    pass


class DegenerateNeighborhood(BipError, ArithmeticError):
    pass


class ZeroNormDirection(BipError, ArithmeticError):
    pass


class ZeroNormCandidate(BipError, ArithmeticError):
    pass


class MaxAttemptsExceeded(BipError, RuntimeError):
    """Provisioning ran out of attempts; carries what was accepted so far."""

    def __init__(self, partial, stats):
        super().__init__(
            f"accepted {stats.accepted} identities in {stats.attempted} attempts "
            f"before exhausting the attempt budget"
        )
        self.partial = partial
        self.stats = stats


# -- capacity statistics --------------------------------------------------

class ZeroCollisions(BipError, ValueError):
    """MLE requested with C = 0; use zero_collision_bound instead."""


class CapacityExceeded(BipError, ValueError):
    pass


# -- metrics / protocols --------------------------------------------------

class EmptyScores(BipError, ValueError):
    pass


class IndexOutOfRange(BipError, IndexError):
    pass


class MissingFolds(BipError, ValueError):
    pass


# -- synthetic harness ----------------------------------------------------

class BracketFailure(BipError, ArithmeticError):
    pass


class GeometricInfeasible(BipError, RuntimeError):
    pass
