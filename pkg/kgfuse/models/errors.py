"""
Exception hierarchy for kgfuse

Every error derives from KGFuseError so the CLI can map it to an exit code.
"""

from typing import Optional


class KGFuseError(Exception):
    """Base class for all kgfuse errors"""


class DimensionError(KGFuseError, ValueError):
    """Tensor or embedding extents do not line up"""


class ConfigurationError(KGFuseError, ValueError):
    """Model, run or checkpoint configuration is inconsistent"""


class DatasetValidationError(KGFuseError, ValueError):
    """A dataset violates one of its invariants"""


class ParseError(DatasetValidationError):
    """A dataset file line could not be parsed"""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LabelIndexError(KGFuseError, IndexError):
    """Class label outside [0, num_classes)"""


class NumericError(KGFuseError, ArithmeticError):
    """Non-finite values or a failed numeric check"""


class DegenerateInputError(NumericError, ValueError):
    """Input leaves an operation with nothing to work on (e.g. all-masked softmax)"""


class DeterminismError(NumericError):
    """Two evaluations of the same function disagreed"""
