"""Exception types shared across the package."""


class BevlocError(Exception):
    """Base class for all errors raised by bevloc."""


class ContractError(BevlocError, ValueError):
    """An argument violates an operation's precondition (shape, range, ...)."""


class GeometryError(BevlocError, ArithmeticError):
    """Degenerate geometry: singular homography, point at infinity, collinear corners."""


class InputError(BevlocError, OSError):
    """An input file is missing, unreadable or malformed."""
