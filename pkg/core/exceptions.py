"""
Exception hierarchy for LatentForge

Every error carries the process exit code the command line reports for it:
2 usage, 3 data/format, 4 numeric.
"""
from typing import Optional


class LatentForgeError(Exception):
    """Base class for all project errors"""
    exit_code = 1


class UsageError(LatentForgeError):
    """Operation called with arguments it cannot accept"""
    exit_code = 2


class ValidationError(UsageError):
    """Invalid user input"""
    pass


class DimensionError(UsageError):
    """Shape mismatch or axis out of range"""
    pass


class DataError(LatentForgeError):
    """Problems with files or dataset contents"""
    exit_code = 3


class FormatError(DataError):
    pass


class VersionError(DataError):
    pass


class LengthError(DataError):
    pass


class ChecksumError(DataError):
    pass


class ParameterCountError(DataError):
    pass


class DefectError(DataError):
    """Lattice defect references a site or bond that does not exist"""
    pass


class NumericError(LatentForgeError):
    """Non-finite value produced; `term` names the loss term when known"""
    exit_code = 4

    def __init__(self, message: str, term: Optional[str] = None):
        super().__init__(message)
        self.term = term


class DomainError(NumericError):
    pass


class DivergenceError(NumericError):
    pass
