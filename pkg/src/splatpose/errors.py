"""Exception types raised across the package."""


class SplatPoseError(Exception):
    """Base class for all package errors."""


class PlyFormatError(SplatPoseError):
    pass


class EmptySceneError(SplatPoseError):
    pass


class InvalidDepthError(SplatPoseError):
    pass


class DegenerateConfigurationError(SplatPoseError):
    """Selected rays are (close to) parallel; the position normal matrix is singular."""


class AmbiguousOrientationError(SplatPoseError):
    """Weighted ray directions cancel out so no viewing direction can be recovered."""


class InsufficientMatchesError(SplatPoseError):
    def __init__(self, found, required=6):
        super().__init__(f"insufficient matches: {found} found, {required} required")
        self.found = found
        self.required = required


class PnPFailedError(SplatPoseError):
    def __init__(self, best_inliers):
        super().__init__(f"pnp failed: best hypothesis had {best_inliers} inliers")
        self.best_inliers = best_inliers


class NonFiniteLossError(SplatPoseError):
    def __init__(self, tensor_name):
        super().__init__(f"non-finite values in '{tensor_name}'")
        self.tensor_name = tensor_name
