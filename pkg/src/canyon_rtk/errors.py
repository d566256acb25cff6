"""Exception types raised across the package."""


class CanyonRtkError(Exception):
    """Base class for all package errors."""


class CoincidentPoints(CanyonRtkError, ValueError):
    pass


class InsufficientSatellites(CanyonRtkError):
    pass


class InvalidElevation(CanyonRtkError, ValueError):
    pass


class MissingPose(CanyonRtkError, KeyError):
    pass


class AllExcluded(CanyonRtkError):
    """Fewer than two satellites survive NLOS exclusion in every constellation."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report if report is not None else []


class DegeneratePlane(CanyonRtkError, ValueError):
    pass


class NoRealSatellites(CanyonRtkError):
    pass


class EmptyBatch(CanyonRtkError, ValueError):
    pass


class OutOfInterval(CanyonRtkError, ValueError):
    pass


class InconsistentTimestamps(CanyonRtkError, ValueError):
    pass


class SingularSystem(CanyonRtkError):
    """Normal equations are rank deficient.

    ``keys`` names the variables spanning the deficient block.
    """

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = tuple(keys)


class SingularInformation(SingularSystem):
    pass


class NotPositiveDefinite(CanyonRtkError, ValueError):
    pass


class DegenerateBox(CanyonRtkError, ValueError):
    pass


class DatasetError(CanyonRtkError):
    """A dataset file is missing or malformed."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class NoOverlap(CanyonRtkError):
    pass


class IoError(CanyonRtkError, OSError):
    """A report or solution file could not be written."""
