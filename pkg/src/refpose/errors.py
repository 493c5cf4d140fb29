"""Exception hierarchy shared by all pipeline stages."""


class RefPoseError(Exception):
    """Base class for pipeline failures."""


class EmptyCloud(RefPoseError):
    pass


class DegenerateCorrespondences(RefPoseError):
    pass


class NoCorrespondences(RefPoseError):
    pass


class AllDiscarded(RefPoseError):
    pass


class ShapeMismatch(RefPoseError, ValueError):
    pass


class BadDimension(RefPoseError, ValueError):
    pass


class InsufficientPoints(RefPoseError):
    pass


class OutOfBounds(RefPoseError, ValueError):
    pass


class BehindCamera(RefPoseError):
    pass


class FormatError(RefPoseError):
    """A file could not be parsed.

    The message always carries the path, a location (line or byte offset)
    and what the reader expected to find there.
    """

    def __init__(self, path, location, expected):
        self.path = str(path)
        self.location = location
        self.expected = expected
        super().__init__(f"{self.path}: {location}: expected {expected}")
