"""Exception types raised across the package."""


class ViewFuseError(Exception):
    """Base class for all package errors."""


class InvalidConfig(ViewFuseError, ValueError):
    pass


class PlacementError(ViewFuseError):
    """Rejection sampling could not place every requested object."""


class EmptyQAError(ViewFuseError):
    pass


class DatasetFormatError(ViewFuseError):
    def __init__(self, path, reason):
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}")


class ShapeError(ViewFuseError, ValueError):
    pass


class UndefinedLossError(ViewFuseError):
    pass


class GradError(ViewFuseError):
    pass


class RangeError(ViewFuseError, ValueError):
    pass


class NumericError(ViewFuseError, ArithmeticError):
    pass


class VocabError(ViewFuseError, KeyError):
    pass


class EmptyInputError(ViewFuseError, ValueError):
    pass


class TransferError(ViewFuseError):
    pass


class FreezeViolationError(ViewFuseError):
    pass


class ChecksumError(ViewFuseError):
    pass


class StageOrderError(ViewFuseError):
    pass


class DegenerateCorpusWarning(UserWarning):
    pass
