"""Exception types raised across the package."""


class NPPriorError(Exception):
    """Base class for all package errors."""


class InvalidParameter(NPPriorError, ValueError):
    pass


class IncompatibleGrids(NPPriorError, ValueError):
    pass


class IncompatibleBatches(NPPriorError, ValueError):
    pass


class InfeasibleConstraint(NPPriorError, ValueError):
    """The requested minimum index variance cannot be reached on the grid."""
