"""Project-specific exceptions."""


class PriorityQueueError(Exception):
    """Base exception for the package."""

    exit_code = 1


class ValidationError(PriorityQueueError):
    """Raised when inputs or configuration are invalid."""

    exit_code = 2


class NonErgodicError(ValidationError):
    """Raised when the total traffic intensity is not below one."""


class InvalidFractionsError(ValidationError):
    """Raised when priority-level fractions are negative or all zero."""


class InvalidParameterError(ValidationError):
    """Raised when a scalar parameter is outside its admissible range."""


class DimensionMismatchError(ValidationError):
    """Raised when an array does not match the lattice of the model."""


class PrefixOutOfRangeError(ValidationError):
    """Raised when a PGF prefix length is outside 0..K-1."""


class LevelOutOfRangeError(ValidationError):
    """Raised when a priority level index is outside its admissible range."""


class DuplicateRadiiError(ValidationError):
    """Raised when mixture contour radii are not pairwise distinct."""


class DegenerateSpreadError(DuplicateRadiiError):
    """Raised when a zero spread would make all mixture radii coincide."""


class WrongKindError(ValidationError):
    """Raised when a PMF has the wrong normalization kind for an operation."""


class MissingMarginalError(ValidationError):
    """Raised when a required marginal PMF is absent or too short."""


class ShapeMismatchError(ValidationError):
    """Raised when compared distributions have incompatible shapes."""


class OnBoundaryError(ValidationError):
    """Raised when an interior-only relation is requested on the boundary."""


class ZeroRatesError(ValidationError):
    """Raised when every arrival rate is zero."""


class ConfigFileError(ValidationError):
    """Raised when a key-value configuration file cannot be parsed."""


class NumericalError(PriorityQueueError):
    """Raised when a computation fails numerically."""

    exit_code = 3


class NoConvergenceError(NumericalError):
    """Raised when the fixed-point iteration exhausts its iteration budget."""

    def __init__(self, message, iterations, last_delta):
        super().__init__(message)
        self.iterations = iterations
        self.last_delta = last_delta


class PoleProximityError(NumericalError):
    """Raised when a PGF denominator is numerically zero."""


class NonFiniteGridSampleError(NumericalError):
    """Raised when a PGF sample on an inversion contour is NaN or infinite."""


class NegativeProbabilityError(NumericalError):
    """Raised when a computed probability is negative beyond round-off."""


class RadiusExceedsConvergenceError(NumericalError):
    """Raised when a contour radius reaches the radius of convergence 1/r."""


class NonPositiveProbabilityError(NumericalError):
    """Raised when a logarithmic comparison meets a non-positive probability."""


class EmptyAdmissibleSetError(NumericalError):
    """Raised when a diagnostic test admits no points."""


class ImaginaryResidueError(NumericalError):
    """Raised when an inverted PMF keeps a non-negligible imaginary part."""


class ResourceLimitError(PriorityQueueError):
    """Raised when a computation would exceed a configured resource limit."""

    exit_code = 4


class MemoryLimitError(ResourceLimitError):
    """Raised before allocating an array larger than the memory limit."""

    def __init__(self, message, required_bytes, limit_bytes):
        super().__init__(message)
        self.required_bytes = required_bytes
        self.limit_bytes = limit_bytes
