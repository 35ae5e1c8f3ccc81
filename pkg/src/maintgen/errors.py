"""Exception types shared across the package.

Every error raised by library code derives from MaintgenError so callers
(CLI, service) can map failures to exit codes / JSON bodies uniformly.
The exception class name doubles as the stable error code on the wire.
"""

from __future__ import annotations


class MaintgenError(Exception):
    """Base class for all library errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# -- corpus --------------------------------------------------------------

class InvalidChunkParams(MaintgenError):
    pass


class InsufficientGeneralData(MaintgenError):
    pass


class ParseError(MaintgenError):
    def __init__(self, line: int, detail: str = ""):
        super().__init__(f"line {line}: {detail}" if detail else f"line {line}")
        self.line = line


class DuplicateId(MaintgenError):
    def __init__(self, record_id: str):
        super().__init__(record_id)
        self.record_id = record_id


class MissingField(MaintgenError):
    def __init__(self, name: str, line: int):
        super().__init__(f"missing field {name!r} at line {line}")
        self.name = name
        self.line = line


# -- embedding / index ---------------------------------------------------

class DuplicateChunkRef(MaintgenError):
    pass


class DimMismatch(MaintgenError):
    pass


class IndexIoError(MaintgenError):
    pass


class FormatVersionMismatch(MaintgenError):
    pass


class ChecksumMismatch(MaintgenError):
    pass


# -- language model ------------------------------------------------------

class SequenceTooLong(MaintgenError):
    pass


class EmptyContinuation(MaintgenError):
    pass


# -- adapters / losses / training -----------------------------------------

class ShapeMismatch(MaintgenError):
    pass


class ZeroProbabilityReference(MaintgenError):
    pass


class SupportMismatch(MaintgenError):
    pass


class DegenerateCurrentOutput(MaintgenError):
    pass


class NonFiniteGradient(MaintgenError):
    pass


class NonFiniteLoss(MaintgenError):
    pass


class EmptyDataset(MaintgenError):
    pass


# -- retrieval-augmented generation ---------------------------------------

class EmptyHits(MaintgenError):
    pass


class LengthMismatch(MaintgenError):
    pass


class EmptyIndex(MaintgenError):
    pass


class RetrievalBelowFloor(MaintgenError):
    def __init__(self, best_score: float, floor: float):
        super().__init__(f"best inner product {best_score:.6f} below floor {floor:.6f}")
        self.best_score = best_score
        self.floor = floor


# -- agents ----------------------------------------------------------------

class EmptyQuery(MaintgenError):
    pass


class UnknownDecision(MaintgenError):
    pass


class MaxStepsExceeded(MaintgenError):
    pass


class PhaseError(MaintgenError):
    """step() called on a terminal agent state."""


# -- config / service -------------------------------------------------------

class ConfigError(MaintgenError):
    pass
