"""Exception hierarchy shared across the toolkit.

``PreconditionError`` subclasses map to CLI exit code 2, ``StageError``
to exit code 3.
"""


class SimileProbeError(Exception):
    """Base class for all toolkit errors."""


class PreconditionError(SimileProbeError):
    """An operation was called with inputs violating its contract."""


class InvariantViolation(SimileProbeError):
    """A domain object failed its structural invariants."""


class NormalizationError(PreconditionError):
    """A multi-token property could not be reduced to a single token."""

    def __init__(self, message: str, reason: str):
        super().__init__(message)
        self.reason = reason


class ProbeBuildError(PreconditionError):
    """A probe item could not be assembled (e.g. too few distractors)."""


class OptionVocabularyError(PreconditionError):
    """An option word cannot be scored under the model vocabulary."""

    def __init__(self, option: str, model_name: str = ""):
        super().__init__(f"option {option!r} is not scorable under model {model_name!r}")
        self.option = option


class SequenceTooLongError(PreconditionError):
    """Input exceeds the model's maximum sequence length."""

    def __init__(self, length: int, max_len: int):
        super().__init__(f"sequence has {length} subtokens, model maximum is {max_len}")
        self.length = length
        self.max_len = max_len


class EmbeddingLookupError(PreconditionError):
    """A word has no vector in the table nor via any fallback."""


class DegenerateInputError(PreconditionError):
    """Numerical routine received rank-deficient or empty input."""


class ModelUnavailableError(SimileProbeError):
    """A checkpoint could not be located or loaded."""


class DatasetUnavailableError(SimileProbeError):
    """A required dataset file could not be located."""


class TrainingDiverged(SimileProbeError):
    """Training loss became non-finite; last good checkpoint was kept."""


class FrozenEncoderViolation(SimileProbeError):
    """Encoder parameters changed while they were contracted to be frozen."""


class SessionAborted(SimileProbeError):
    """An interactive session ended before completion; partial transcript saved."""


class StageError(SimileProbeError):
    """A pipeline stage failed; state on disk is resumable."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage
