class UserFacingError(Exception):
    """
    A base class for all exceptions that are considered user-correctable
    and should not produce a full stack trace.
    """
    pass


class ConfigError(UserFacingError):
    """Raised when an experiment configuration cannot be read or validated."""
    pass


class ClaimFailure(UserFacingError):
    """Raised by the CLI when a verified claim or certificate does not hold."""
    pass


# --- Sparsity patterns ---

class PatternError(UserFacingError):
    pass

class BoundaryNotIncreasing(PatternError):
    pass

class BudgetExceedsLevelWidth(PatternError):
    pass

class M0NotZero(PatternError):
    pass

class PatternDoesNotCover(PatternError):
    pass

class EpsilonOutOfRange(PatternError):
    pass

class LengthMismatch(PatternError):
    pass


# --- Operators and sampling ---

class OperatorError(UserFacingError):
    pass

class NotPowerOfTwo(OperatorError):
    pass

class LengthNotDivisible(OperatorError):
    pass

class IndexOutOfRange(OperatorError):
    pass

class BandOverflow(OperatorError):
    pass

class TooLarge(OperatorError):
    pass


# --- Solvers ---

class SolverError(UserFacingError):
    pass

class NotConverged(SolverError):
    pass

class DimensionMismatch(SolverError):
    pass

class NotRealValued(SolverError):
    pass

class InfeasibleSystem(SolverError):
    pass


# --- Certification ---

class CertificationError(UserFacingError):
    pass

class EnumerationTooLarge(CertificationError):
    pass

class InfiniteRatio(CertificationError):
    pass

class KernelTooLarge(CertificationError):
    pass

class RhoOutOfRange(CertificationError):
    pass

class NotSorted(CertificationError):
    pass


# --- Flip tests ---

class InvalidPermutation(UserFacingError):
    pass

class MoverInfeasible(UserFacingError):
    pass

class NoRecoverableThreshold(UserFacingError):
    """No threshold in the sweep produced an exactly recovered binary vector."""
    pass


# --- Counterexamples ---

class ParameterOrder(UserFacingError):
    pass

class ParameterInfeasible(UserFacingError):
    pass

class UnknownCounterexample(UserFacingError):
    pass


# --- Ingestion ---

class IngestError(UserFacingError):
    pass

class UnsupportedFormat(IngestError):
    pass

class CorruptFile(IngestError):
    pass
