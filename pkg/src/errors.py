"""Exception types shared by all cpcscan modules.

Every error carries the CLI exit code it maps to. Indices stored on errors are 1-based.
"""

from __future__ import annotations

from typing import Optional


class CpcScanError(Exception):
    exit_code = 2


# ---------------------------------------------------------------------------
# Usage / config (exit 1)
# ---------------------------------------------------------------------------

class ConfigError(CpcScanError, ValueError):
    exit_code = 1

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class InvalidLevel(ConfigError):
    def __init__(self, level: float):
        self.level = level
        super().__init__("level", f"must lie in (0, 1), got {level}")


# ---------------------------------------------------------------------------
# Data (exit 2)
# ---------------------------------------------------------------------------

class DataError(CpcScanError, ValueError):
    exit_code = 2


class ConstantColumn(DataError):
    def __init__(self, column: int):
        self.column = column
        super().__init__(f"column {column} has zero variance")


class ParseError(DataError):
    def __init__(self, row: int, col: int, text: str = ""):
        self.row = row
        self.col = col
        super().__init__(f"cannot parse {text!r} at row {row}, column {col}")


class RaggedRows(DataError):
    def __init__(self, row: int, expected: int, got: int):
        self.row = row
        super().__init__(f"row {row} has {got} fields, expected {expected}")


class NonFinite(DataError):
    def __init__(self, row: int, col: int):
        self.row = row
        self.col = col
        super().__init__(f"non-finite value at row {row}, column {col}")


class DimensionMismatch(DataError):
    pass


class KTooLarge(DataError):
    def __init__(self, k: int, rank: int):
        self.k = k
        self.rank = rank
        super().__init__(f"k={k} exceeds the numerical rank {rank}")


class RankDeficient(DataError):
    pass


class InsufficientDof(DataError):
    def __init__(self, n: int, k: int):
        super().__init__(f"n - k - 1 = {n - k - 1} leaves no residual degrees of freedom")


# ---------------------------------------------------------------------------
# Numerical (exit 3)
# ---------------------------------------------------------------------------

class NumericalError(CpcScanError, ArithmeticError):
    exit_code = 3


class NumericalFailure(NumericalError):
    pass


class NotIdentifiable(NumericalError):
    def __init__(self, ratio: float, message: Optional[str] = None):
        self.ratio = ratio
        super().__init__(message or f"design is not identifiable (condition ratio {ratio:.3e})")


class DegenerateD(NumericalError):
    def __init__(self, D: float):
        self.D = D
        super().__init__(f"identifiability denominator D={D:.3e} is degenerate")


class StructuredConstructionFailed(NumericalError):
    def __init__(self, alignment: float, message: Optional[str] = None):
        self.alignment = alignment
        super().__init__(
            message
            or f"target column alignment {alignment:.4f} with the top-2 components is below 0.99; "
            "retry with a smaller structured_tau"
        )
