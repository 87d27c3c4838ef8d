"""Exception hierarchy shared by all llmembed modules.

Every error carries a short machine-parsable ``code`` so the CLI can emit a
single-line diagnostic (``llmembed: error [E_XXX] ...``) and exit nonzero.
"""


class LLMEmbedError(Exception):
    code = "E_INTERNAL"


class FormatError(LLMEmbedError):
    """File does not speak the expected wire format (magic, version, dtype)."""

    code = "E_FORMAT"


class CorruptionError(LLMEmbedError):
    """File structure is recognized but sizes do not add up (truncation, junk)."""

    code = "E_CORRUPT"


class ValidationError(LLMEmbedError):
    """A value-level invariant is violated (non-finite data, bad shapes, bad labels)."""

    code = "E_VALIDATE"


class AlignmentError(ValidationError):
    """Sources of one bundle disagree on row counts or manifest-declared shapes."""

    code = "E_ALIGN"


class SourceError(LLMEmbedError):
    """A fusion strategy needs a source the bundle does not provide."""

    code = "E_SOURCE"


class StrategyError(LLMEmbedError):
    """Unknown strategy index or alias."""

    code = "E_STRATEGY"


class MismatchError(LLMEmbedError):
    """Checkpoint and data (or flags) disagree on strategy or dimensions."""

    code = "E_MISMATCH"


class PhaseError(LLMEmbedError):
    """A timed phase has no wattage in the power profile."""

    code = "E_PHASE"


class TrainingDivergedError(LLMEmbedError):
    """Loss became non-finite; carries the batch coordinates for diagnostics."""

    code = "E_NONFINITE"

    def __init__(self, epoch: int, batch_index: int, loss: float):
        self.epoch = epoch
        self.batch_index = batch_index
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch_index}"
        )
