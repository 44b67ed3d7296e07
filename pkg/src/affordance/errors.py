"""Exception hierarchy shared by the pipeline stages."""


class AffordanceError(Exception):
    """Base class for all errors raised by this package."""


class AllPixelsMissing(AffordanceError):
    pass


class DegenerateScene(AffordanceError):
    """No usable Manhattan structure could be recovered from the cloud."""


class EmptyCloud(AffordanceError):
    pass


class FrameMismatch(AffordanceError):
    pass


class InvalidDims(AffordanceError):
    pass


class FilterLargerThanGrid(AffordanceError):
    pass


class WindowTooSmall(AffordanceError):
    pass


class NoQualifyingPatches(AffordanceError):
    pass


class ClusterCollapsed(AffordanceError):
    pass


class DegenerateFit(AffordanceError):
    pass


class NonFiniteLoss(AffordanceError):
    pass


class ImageTooSmall(AffordanceError):
    pass


class NoPositives(AffordanceError):
    pass


class CameraInsideGeometry(AffordanceError):
    pass


class DimensionMismatch(AffordanceError):
    """Prediction and reference maps do not have the same shape."""
