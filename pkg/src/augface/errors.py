"""Exception types shared across the package."""


class AugfaceError(Exception):
    """Base class for all errors raised by augface."""


class InsufficientLandmarksError(AugfaceError, ValueError):
    """Fewer visible correspondences than a solver needs."""


class PoseFailureError(AugfaceError, RuntimeError):
    """Pose estimation did not converge to a usable camera."""


class DegenerateConfigurationError(AugfaceError, ValueError):
    """Input points do not determine the requested transform."""


class AlignmentError(AugfaceError, ValueError):
    """Landmark slots needed by an alignment template are missing."""


class ExpressionFitError(AugfaceError, ValueError):
    """Mouth landmarks are missing, the blendshape cannot be fitted."""


class ZeroVarianceError(AugfaceError, ValueError):
    """Training samples carry no variance."""


class EmbeddingNotFoundError(AugfaceError, KeyError):
    """A precomputed backend has no vector for the requested id."""


class ProtocolError(AugfaceError, ValueError):
    """Malformed or inconsistent protocol metadata."""


class LeakageError(AugfaceError, ValueError):
    """Feature conditioning was asked to train on evaluation items."""
