"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values it cannot handle."""


class FormatError(ValueError):
    """An on-disk artifact does not match its declared layout."""


class GraphError(ValueError):
    """A road-graph structural invariant is violated."""
