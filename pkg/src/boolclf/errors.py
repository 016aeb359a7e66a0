"""Exception types shared across the package."""


class BoolclfError(Exception):
    """Base class for all errors raised by this package."""


class ExprSyntaxError(BoolclfError):
    """Malformed expression text; ``offset`` is the byte offset of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class MissingPrimitiveError(BoolclfError):
    """An assignment does not cover every primitive in the expression."""


class SizeExceededError(BoolclfError):
    """CNF distribution would exceed the clause budget."""


class InsufficientPrimitivesError(BoolclfError):
    """Not enough distinct primitives (or pool entries) to generate from."""


class ShapeMismatchError(BoolclfError):
    """Operands have non-conforming shapes."""


class NonFiniteGradientError(BoolclfError):
    """A gradient contains NaN or infinity."""


class SingleClassError(BoolclfError):
    """Both classes are required but only one is present."""


class DegenerateFeaturesError(BoolclfError):
    """All feature rows are identical while labels conflict."""


class InsufficientExamplesError(BoolclfError):
    """A primitive or expression lacks the required positive/negative examples."""


class NoConvergenceError(BoolclfError):
    """An iterative fit did not converge within its iteration budget."""


class UnknownPrimitiveError(BoolclfError):
    """Expression references a primitive absent from the bank or dataset."""


class MissingCalibrationError(BoolclfError):
    """Probability output requested for an uncalibrated primitive."""


class TraceMismatchError(BoolclfError):
    """A composition trace does not match the network or gradient passed."""


class NonFiniteLossError(BoolclfError):
    """Training produced a non-finite loss."""


class NoPositivesError(BoolclfError):
    """Metric requires at least one positive pair."""


class UnknownExpressionError(BoolclfError):
    """Scorer asked about an expression it was not trained on."""


class InvalidCorrelationError(BoolclfError):
    """Latent correlation matrix is not positive semi-definite."""


class FormatError(BoolclfError):
    """A stored artifact is corrupt; ``offset`` locates the fault when known."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (offset {offset})")
        self.offset = offset


class VersionMismatchError(BoolclfError):
    """Artifact was written by an incompatible format version."""


class DigestMismatchError(BoolclfError):
    """Content digest does not match the expected value."""


class InfeasibleSplitError(BoolclfError):
    """No valid split found within the attempt budget."""
