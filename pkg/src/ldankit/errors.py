"""Exception types shared across the package."""


class LdanError(Exception):
    """Base class for all ldankit errors."""


class InvalidInputError(LdanError, ValueError):
    pass


class DegenerateGeometryError(LdanError):
    """Normals do not span enough of the SH basis for the requested solve."""


class DegenerateLightingError(LdanError):
    """Lighting has (numerically) no non-DC energy under the Q quadratic form."""


class NumericalAbortError(LdanError, FloatingPointError):
    """A loss or activation became non-finite."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


class FoldConstructionError(LdanError):
    pass


class InsufficientRecordsError(LdanError):
    pass
