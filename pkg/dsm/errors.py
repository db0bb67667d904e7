"""Exception hierarchy shared by the library and the CLI.

Every error carries the process exit code the CLI should use:
2 for input validation problems, 3 for numerical failures.
"""
from typing import Optional


class DsmError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class InputValidationError(DsmError):
    exit_code = 2


class NumericalError(DsmError):
    exit_code = 3


# Validation family

class AllZeroError(InputValidationError):
    pass


class NegativeWeightError(InputValidationError):
    pass


class VocabMismatchError(InputValidationError):
    pass


class LambdaOutOfRangeError(InputValidationError):
    pass


class LambdaBelowBoundError(InputValidationError):
    pass


class DegenerateSeedError(InputValidationError):
    pass


class UniformSeedError(InputValidationError):
    pass


class GridError(InputValidationError):
    pass


class ZerosTooLargeError(InputValidationError):
    pass


class EmptyFeedbackError(InputValidationError):
    pass


class DuplicateDocIdError(InputValidationError):
    def __init__(self, doc_id: str):
        super().__init__(f"duplicate doc_id: {doc_id!r}")
        self.doc_id = doc_id


class EmptyCorpusError(InputValidationError):
    pass


class MalformedRecordError(InputValidationError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "input"):
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)
        self.line = line
        self.source = source


class MissingQrelsError(InputValidationError):
    pass


class ConfigError(InputValidationError):
    pass


# Numerical family

class InfiniteDivergenceError(NumericalError):
    pass


class NegativeEntryError(NumericalError):
    pass


class ZeroMixtureProbabilityError(NumericalError):
    pass


class ZeroDenominatorError(NumericalError):
    pass
