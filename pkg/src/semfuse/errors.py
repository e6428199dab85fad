"""Exception taxonomy shared across the package."""


class SemfuseError(Exception):
    """Base class for all package errors."""


class ShapeError(SemfuseError):
    """Operand shapes violate an operation's contract."""


class ParameterError(SemfuseError):
    """A hyperparameter or argument is outside its legal range."""


class DegenerateInputError(SemfuseError):
    """Input is structurally valid but semantically unusable (zero norm, all-masked, ...)."""


class DivergenceError(SemfuseError):
    """KL divergence is infinite: p puts mass where q has none."""


class VocabError(SemfuseError):
    """Token id or string not present in the vocabulary."""


class FormatError(SemfuseError):
    """A file does not parse as the expected binary or text format."""


class PartitionError(SemfuseError):
    """A feature grid cannot be tiled into the requested equal blocks."""


class CapacityError(SemfuseError):
    """Sequence exceeds the decoder's maximum length."""


class EvaluationError(SemfuseError):
    """A differentiable evaluation produced a non-finite value or was aborted."""


class ConfigError(SemfuseError):
    """Experiment configuration is malformed or contains unknown keys."""


class CheckpointError(SemfuseError):
    """Checkpoint missing, malformed, or incompatible with the model config."""
