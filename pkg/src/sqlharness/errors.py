"""Exception hierarchy shared across the harness."""


class HarnessError(Exception):
    """Base class for every error raised by this package."""


# schema loading
class ParseError(HarnessError):
    pass


class IntegrityError(HarnessError):
    pass


class UnknownDatabaseError(HarnessError):
    pass


class OutOfRange(HarnessError, IndexError):
    pass


# prompts / selection
class EmptySelectionError(HarnessError):
    pass


class MissingContentError(HarnessError):
    pass


class UnparseableError(HarnessError):
    pass


class EmbedderError(HarnessError):
    pass


# storage / execution
class StorageError(HarnessError):
    pass


class NotExecutable(HarnessError):
    pass


# llm backends
class TransportError(HarnessError):
    def __init__(self, message, retryable=True):
        super().__init__(message)
        self.retryable = retryable


class QuotaError(HarnessError):
    pass


class MalformedResponseError(HarnessError):
    pass


class IoError(HarnessError, OSError):
    pass


# selection / evaluation
class EmptyInput(HarnessError, ValueError):
    pass


class MissingPredictionError(HarnessError):
    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" (+{len(self.missing) - 10} more)"
        super().__init__(f"no prediction for question ids: {shown}{more}")


class EmptyEvaluationError(HarnessError, ValueError):
    pass


# synthetic data
class MissingGoldError(HarnessError):
    pass


class NoJsonFoundError(HarnessError):
    pass


class GoldInvalidError(HarnessError):
    pass


class ConfigError(HarnessError):
    pass
