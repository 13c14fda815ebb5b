"""Exception types raised across the package.

Every error carries a stable ``code`` (the class name) so the CLI can print a
machine-readable line on failure.
"""


class CubeQAError(Exception):
    """Base class for all package errors."""

    @property
    def code(self):
        return type(self).__name__


# PLY ingest
class MalformedHeader(CubeQAError):
    pass


class UnsupportedFormat(CubeQAError):
    pass


class MissingProperty(CubeQAError):
    pass


class TruncatedBody(CubeQAError):
    pass


# projection
class PatchTooLarge(CubeQAError):
    pass


# backbone / features
class FeatureFileMissing(CubeQAError):
    pass


class ShapeMismatch(CubeQAError, ValueError):
    pass


# regression
class DimensionMismatch(CubeQAError, ValueError):
    pass


class WrongFaceCount(CubeQAError, ValueError):
    pass


class LengthMismatch(CubeQAError, ValueError):
    pass


class EmptyDataset(CubeQAError, ValueError):
    pass


class ModeMismatch(CubeQAError, ValueError):
    pass


class TooFewItems(CubeQAError, ValueError):
    pass


class CheckpointError(CubeQAError):
    pass


# evaluation
class DegenerateVariance(CubeQAError, ValueError):
    pass


class MissingConfidenceIntervals(CubeQAError, ValueError):
    pass


class OneClassOnly(CubeQAError, ValueError):
    pass


class NoDifferentPairs(CubeQAError, ValueError):
    pass


# pipeline
class ManifestError(CubeQAError):
    pass


class IoFailure(CubeQAError):
    pass
