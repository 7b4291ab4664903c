class TalTppError(Exception):
    """Base error for everything raised by this package"""


class ConfigError(TalTppError):
    """Invalid configuration; carries every violation found, not only the first"""

    def __init__(self, messages):
        if isinstance(messages, str):
            messages = [messages]
        self.messages = list(messages)
        super().__init__('; '.join(self.messages))


class DatasetParseError(TalTppError):
    """A dataset line could not be parsed"""

    def __init__(self, line_number, reason):
        self.line_number = line_number
        self.reason = reason
        super().__init__(f'line {line_number}: {reason}')


class SequenceValidationError(TalTppError):
    """A sequence violates the EventSequence invariants"""

    def __init__(self, seq_id, reason):
        self.seq_id = seq_id
        self.reason = reason
        super().__init__(f'sequence {seq_id!r}: {reason}')


class ClosedVocabularyError(TalTppError):
    """A token or event type outside a closed vocabulary"""


class ShapeError(TalTppError):
    """Tensor shapes do not agree"""


class ScalerError(TalTppError):
    """The time scaler cannot be fitted"""


class SplitError(TalTppError):
    """The dataset cannot be partitioned as requested"""


class DivergenceError(TalTppError):
    """Training produced a non-finite loss"""


class CheckpointError(TalTppError):
    """A checkpoint is missing, malformed, or of the wrong format"""


class GradCheckError(TalTppError):
    """Gradient check could not be evaluated"""
