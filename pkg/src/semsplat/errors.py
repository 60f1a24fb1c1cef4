"""Exception hierarchy shared by all pipeline stages."""


class SemsplatError(Exception):
    """Base class for every error raised by this package."""


class MissingArtifact(SemsplatError):
    """A referenced file, frame, or record does not exist."""


class SchemaViolation(SemsplatError):
    """An on-disk artifact disagrees with its manifest or header."""


class CorruptFeature(SemsplatError):
    """A feature record contains NaN or infinite entries."""


class CorruptRegion(SemsplatError):
    """A run-length region overflows its frame grid."""


class ShapeError(SemsplatError):
    """Operands disagree on grid or matrix dimensions."""


class DegenerateFeature(SemsplatError):
    """A feature vector has zero norm and no defined direction."""


class NumericalFailure(SemsplatError):
    """Non-finite values appeared during optimization or rendering."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class EmptyDataset(SemsplatError):
    """An operation requiring at least one record received none."""


class EmptySupervision(SemsplatError):
    """Every pixel of a supervision target is unassigned."""


class EmptyQuerySet(SemsplatError):
    """A relevance computation received zero query embeddings."""


class EmptySelection(SemsplatError):
    """No codebook category scored above the selection threshold."""


class EmptyPairSet(SemsplatError):
    """A pairwise statistic has no valid pair to average over."""


class GenerationFailure(SemsplatError):
    """Synthetic scene parameters cannot be realized."""


class StaleState(SemsplatError):
    """Backward pass invoked with state from a different forward pass."""
