"""Exception hierarchy shared across the package."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateSampleError(PipelineError):
    """Sample has (near-)zero variance and cannot be standardized."""


class ManifestParseError(PipelineError):
    """Dataset manifest is missing, malformed, or has bad field values."""


class TensorParseError(PipelineError):
    """Tensor file is missing or does not decode."""


class ShapeMismatchError(PipelineError):
    """Tensor shape differs from what the dataset or trained space expects."""


class DuplicateIdError(PipelineError):
    """Two samples share the same id."""


class DimensionTooLargeError(PipelineError):
    """Requested embedding dimension k exceeds n - 1."""


class IndexOutOfRangeError(PipelineError, IndexError):
    """Sample index outside the graph."""


class NumericalUnderflowError(PipelineError):
    """Kernel row sum underflowed; query point is too far from training set."""


class DisconnectedGraphError(PipelineError):
    """k-NN graph has more than one connected component."""


class SingleClassError(PipelineError):
    """Classifier fit requires both classes to be present."""


class DimensionMismatchError(PipelineError):
    """Coordinate width differs from the fitted model."""


class LengthMismatchError(PipelineError):
    """Paired label sequences have different lengths."""


class TooFewSamplesError(PipelineError):
    """Not enough samples per class to build five folds."""


class IncompleteVotesError(PipelineError):
    """A test subject has a vote count other than 25."""


class SubjectSetMismatchError(PipelineError):
    """Two vote-record lists cover different subject sets."""


class VersionMismatchError(PipelineError):
    """Persisted file has an unsupported format version."""


class ConfigError(PipelineError):
    """Configuration value outside its valid range."""
