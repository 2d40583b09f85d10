"""Exception hierarchy. Each family maps to a stable CLI exit code."""


class GeoGrpoError(Exception):
    exit_code = 1


class ParseError(GeoGrpoError):
    exit_code = 2

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class GeometryError(GeoGrpoError):
    exit_code = 3


class InvalidRotationError(GeometryError):
    pass


class InvalidIntrinsicsError(GeometryError):
    pass


class InsufficientPointsError(GeometryError):
    pass


class DegenerateGeometryError(GeometryError):
    """Raised when the source point set cannot determine a similarity.

    ``fallback`` holds the transform the reward pipeline uses instead.
    """

    def __init__(self, message, fallback):
        super().__init__(message)
        self.fallback = fallback


class LengthMismatchError(GeometryError):
    pass


class TrajectoryTooShortError(GeometryError):
    pass


class NonFiniteError(GeometryError):
    pass


class ConfigError(GeoGrpoError):
    exit_code = 4


class EmptyGroupError(GeoGrpoError):
    exit_code = 4


class RolloutFailedError(GeoGrpoError):
    pass
