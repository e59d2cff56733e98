"""Module contains exceptions raised by scene_fusion."""

from typing import Any, Optional  # pylint: disable=unused-import

from numpy.linalg import LinAlgError  # pylint: disable=unused-import


class SceneFusionException(Exception):
    """Base error of the package."""

    def __init__(self, *args, **kwargs):
        # type: (*Any, **Any) -> None
        self.original_exc = kwargs.get("original_exc")
        Exception.__init__(self, *args)


class AngleNearPi(SceneFusionException):
    """Rotation angle too close to pi, the logarithm is multivalued."""


class BehindCamera(SceneFusionException):
    """Point lies on or behind the near plane."""


class PixelOutOfBounds(SceneFusionException):
    """Pixel coordinates are outside of the image."""


class InvalidCamera(SceneFusionException):
    """Camera intrinsics are not valid."""


class InvalidScene(SceneFusionException):
    """Primitive parameters violate their ranges."""


class EmptySelection(SceneFusionException):
    """No primitive qualified for the selection."""


class SceneFormatError(SceneFusionException):
    """Scene file could not be parsed."""

    def __init__(self, *args, **kwargs):
        # type: (*Any, **Any) -> None
        self.line = kwargs.pop("line", None)  # type: Optional[int]
        self.field = kwargs.pop("field", None)  # type: Optional[str]
        SceneFusionException.__init__(self, *args, **kwargs)


class DimensionMismatch(SceneFusionException):
    """Buffers do not share their dimensions."""


class ImageTooSmall(SceneFusionException):
    """Image is smaller than the filter window."""


class EmptyMask(SceneFusionException):
    """Mask selects no pixel."""


class DegenerateGeometry(SceneFusionException):
    """Point correspondences are rank-deficient."""


class NoVisiblePixels(SceneFusionException):
    """Object projects to no pixel in any view."""


class GridFrameMismatch(SceneFusionException):
    """Voxel grids do not share origin and voxel size."""


class UnknownStateIndex(SceneFusionException):
    """State index is not part of the recurrent state."""


class UnknownObject(SceneFusionException):
    """Object id is not registered."""


class NoViews(SceneFusionException):
    """Not enough views were provided."""


class ObjectOutsideRoom(SceneFusionException):
    """Synthetic object leaves the room."""


class ConfigError(SceneFusionException):
    """Configuration is malformed."""


class StageError(SceneFusionException):
    """A fusion stage failed; ``stage`` names it."""

    def __init__(self, *args, **kwargs):
        # type: (*Any, **Any) -> None
        self.stage = kwargs.pop("stage", None)  # type: Optional[str]
        SceneFusionException.__init__(self, *args, **kwargs)

    def __str__(self):
        # type: () -> str
        message = Exception.__str__(self)
        return f"[{self.stage}] {message}" if self.stage else message
