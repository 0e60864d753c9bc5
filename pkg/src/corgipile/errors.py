"""Exception hierarchy shared by every subsystem."""


class CorgiPileError(Exception):
    """Base class for all library errors."""


class DatasetFormatError(CorgiPileError):
    """The file is not a valid dataset (bad magic, truncated header, bad index)."""


class IntegrityError(DatasetFormatError):
    """A block's CRC32 does not match its stored checksum."""


class ParseError(CorgiPileError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DimensionError(CorgiPileError):
    """A feature index or vector length is inconsistent with the dataset dimension."""


class ConfigError(CorgiPileError, ValueError):
    """Invalid user-supplied configuration (buffer sizes, batch sizes, ...)."""


class BudgetError(CorgiPileError):
    """An operation would exceed its configured memory or enumeration budget."""


class DivergenceError(CorgiPileError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int | None = None, step: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class PipelineError(CorgiPileError):
    """The producer side of a double-buffered stream failed.

    ``partial_ids`` holds the tuple ids the consumer had received before the failure.
    """

    def __init__(self, message: str, partial_ids=None):
        super().__init__(message)
        self.partial_ids = list(partial_ids or [])


class NumericError(CorgiPileError, ArithmeticError):
    """Non-finite features, labels or model entries reached a gradient computation."""
