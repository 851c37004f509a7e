"""
Exception hierarchy for the gerrymander engine.

Every error raised on purpose by the package derives from GerrymanderError and
carries the process exit code the command line returns for it.
"""

from typing import Optional


class GerrymanderError(Exception):
    """Base class for all engine and analysis errors."""

    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class UsageError(GerrymanderError):
    """Bad command-line usage."""

    exit_code = 1


class ContractViolation(GerrymanderError):
    """A caller broke a documented precondition."""

    exit_code = 1


class SignatureError(ContractViolation):
    """Malformed transfer-matrix signature (unbalanced arcs, misplaced blocked state)."""


class HashRangeError(ContractViolation):
    """Perfect-hash index outside 1..M_n."""


class SeriesDomainError(ContractViolation):
    """Series values outside the domain of a ratio estimator (zero or negative terms)."""


class InternalConsistencyError(GerrymanderError):
    """An invariant of the enumeration failed; indicates a bug or a corrupted table."""

    exit_code = 4


class BudgetError(GerrymanderError):
    """Exhaustive oracle asked to run beyond its size budget."""

    exit_code = 3


class ResourceRefusal(GerrymanderError):
    """The estimated table size exceeds the configured memory budget."""

    exit_code = 3

    def __init__(self, required_bytes: int, available_bytes: int):
        super().__init__(
            f"memory budget exceeded: need ~{required_bytes / 2**20:.1f} MiB, "
            f"budget is {available_bytes / 2**20:.1f} MiB"
        )
        self.required_bytes = required_bytes
        self.available_bytes = available_bytes


class CheckpointMismatch(GerrymanderError):
    """A checkpoint file does not belong to the run trying to resume from it."""

    exit_code = 2


class DataFormatError(GerrymanderError):
    """Unparseable input file."""

    exit_code = 2

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where = f"{where}{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.path = path
        self.line = line


class VerificationMismatch(GerrymanderError):
    """Engine output disagrees with a reference (oracle or bundled fixture)."""

    exit_code = 4

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class InsufficientDataError(GerrymanderError):
    """Too few terms for the requested analysis."""

    exit_code = 2


class RankDeficiencyError(GerrymanderError):
    """Singular differential-approximant matching system."""

    exit_code = 2

    def __init__(self, size: int, rank: int):
        super().__init__(f"matching system of size {size} has rank {rank} ({size - rank} deficient rows)")
        self.size = size
        self.rank = rank
        self.deficient_rows = size - rank


class PredictionUnavailable(GerrymanderError):
    """No usable differential approximant survived filtering."""

    exit_code = 2
