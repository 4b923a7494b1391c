"""Exception types shared across the solver."""


class MatrixMarketError(ValueError):
    """Malformed MatrixMarket input; carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class NotPositiveDefiniteError(ArithmeticError):
    """LLt pivot at or below threshold; factorization aborts (no dynamic pivoting)."""

    def __init__(self, column, pivot):
        self.column = column
        self.pivot = pivot
        super().__init__(f"matrix not positive definite at column {column} (pivot {pivot:g})")


class SingularPivotError(ArithmeticError):
    """LDLt pivot with magnitude at or below threshold."""

    def __init__(self, column, pivot):
        self.column = column
        self.pivot = pivot
        super().__init__(f"singular pivot at column {column} (pivot {pivot:g})")


class DivergentSolveError(ArithmeticError):
    """Zero diagonal encountered in a triangular solve."""


class StructuralError(RuntimeError):
    """Internal consistency failure in the symbolic structure (bug guard)."""
