"""Exceptions raised by subrank.

Every error derives from :class:`SubrankError`, itself a :class:`ValueError`,
so that callers only interested in "bad input" can catch ``ValueError``.
"""
from __future__ import annotations


class SubrankError(ValueError):
    pass


class TiesDetected(SubrankError):
    def __init__(self, column: int, value: float):
        self.column = column
        self.value = value
        super().__init__(
            f"column {column} contains the repeated value {value!r}"
            " (use a random tie-break policy for data with ties)"
        )


class EnumerationTooLarge(SubrankError):
    def __init__(self, count: int, cap: int):
        self.count = count
        self.cap = cap
        super().__init__(
            f"exhaustive enumeration needs {count} sub-samples (cap is {cap});"
            " use random sub-sampling instead"
        )


class ShapeMismatch(SubrankError):
    pass


class GridTooLarge(SubrankError):
    def __init__(self, cells: int, limit: int):
        self.cells = cells
        self.limit = limit
        super().__init__(f"a dense grid of {cells} cells exceeds the limit of {limit}")


class NullHasZeroCell(SubrankError):
    def __init__(self, cell: tuple[int, ...]):
        self.cell = cell
        super().__init__(f"null grid has zero weight at {cell} where the estimate does not")


class DegenerateSlice(SubrankError):
    pass


class ZeroVarianceColumn(SubrankError):
    def __init__(self, column: int):
        self.column = column
        super().__init__(f"column {column} has zero variance")


class SingularCorrelation(SubrankError):
    def __init__(self, rho: float, d: int):
        self.rho = rho
        self.d = d
        super().__init__(f"equicorrelation {rho} is not positive definite in dimension {d}")
