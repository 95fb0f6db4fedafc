"""Exception hierarchy shared by all modules."""


class GbplError(Exception):
    """Base class for all package errors."""


class InvalidInputError(GbplError, ValueError):
    pass


class DegenerateGeometryError(GbplError, ValueError):
    pass


class ParseError(GbplError, ValueError):
    def __init__(self, message, feature_id=None):
        if feature_id is not None:
            message = f"feature {feature_id!r}: {message}"
        super().__init__(message)
        self.feature_id = feature_id


class NotFoundError(GbplError, KeyError):
    pass


class StreamOrderError(GbplError, ValueError):
    pass


class InitializationError(GbplError, RuntimeError):
    pass


class LocalizationLostError(GbplError, RuntimeError):
    pass


class NoIntersectionError(GbplError, ValueError):
    pass


class AlignmentFailure(GbplError, RuntimeError):
    pass


class RouteNotFoundError(GbplError, RuntimeError):
    pass


class UnreachableEntropyError(GbplError, RuntimeError):
    pass


class UndefinedEntropyError(GbplError, ValueError):
    pass
