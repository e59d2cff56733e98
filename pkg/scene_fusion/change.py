"""Per-pixel change localization between two renders, and object region masks."""

from collections import namedtuple
from typing import List, Optional, Sequence  # pylint: disable=unused-import

import numpy as np
from scipy import ndimage

from .exceptions import DimensionMismatch
from .protocols import FeatureExtractor

DEFAULT_TAU = 0.8
DEFAULT_MIN_AREA = 50
NORM_EPSILON = 1e-12

ObjectRegion = namedtuple("ObjectRegion", ["region_id", "mask"])

_STRUCTURE = np.ones((3, 3), dtype=bool)


def _box_mean(image, size):
    # type: (np.ndarray, int) -> np.ndarray
    weights = np.full(size, 1.0 / size)
    out = ndimage.correlate1d(image, weights, axis=0, mode="nearest")
    return ndimage.correlate1d(out, weights, axis=1, mode="nearest")


class PatchDescriptor(FeatureExtractor):
    """Center color, 5x5 mean and std, and 9x9 mean, twelve values per pixel.

    Borders are padded by repeating the edge pixels, so a descriptor only
    depends on its 9x9 neighbourhood.
    """

    name = "patch"

    def extract(self, image):
        # type: (np.ndarray) -> np.ndarray
        image = np.asarray(image, dtype=np.float64)
        mean5 = _box_mean(image, 5)
        square5 = _box_mean(image * image, 5)
        std5 = np.sqrt(np.maximum(square5 - mean5 * mean5, 0.0))
        mean9 = _box_mean(image, 9)
        return np.concatenate([image, mean5, std5, mean9], axis=2)


def normalize_features(features):
    # type: (np.ndarray) -> np.ndarray
    """L2-normalize the last axis; zero vectors become the first basis vector."""
    features = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(features, axis=-1, keepdims=True)
    zero = norms[..., 0] < NORM_EPSILON
    out = features / np.where(norms < NORM_EPSILON, 1.0, norms)
    out[zero] = 0.0
    out[zero, 0] = 1.0
    return out


def extract_features(image, extractor=None):
    # type: (np.ndarray, Optional[FeatureExtractor]) -> np.ndarray
    """Unit-norm ``(H, W, D)`` feature map of an ``(H, W, 3)`` image."""
    extractor = extractor or PatchDescriptor()
    features = extractor.extract(np.asarray(image, dtype=np.float64))
    if features.shape[:2] != np.shape(image)[:2]:
        raise DimensionMismatch(
            f"Extractor {extractor.name} returned {features.shape[:2]} "
            f"for an image of {np.shape(image)[:2]}."
        )
    return normalize_features(features)


def cosine_map(fa, fb):
    # type: (np.ndarray, np.ndarray) -> np.ndarray
    if fa.shape != fb.shape:
        raise DimensionMismatch(f"Feature maps differ: {fa.shape} vs {fb.shape}.")
    return np.clip(np.einsum("ijk,ijk->ij", fa, fb), -1.0, 1.0)


def raw_change_mask(fa, fb, tau=DEFAULT_TAU):
    # type: (np.ndarray, np.ndarray, float) -> np.ndarray
    """Pixels whose cosine similarity is below ``tau``, before morphology."""
    if not -1.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [-1, 1], got {tau}.")
    return cosine_map(fa, fb) < tau


def change_mask(fa, fb, tau=DEFAULT_TAU):
    # type: (np.ndarray, np.ndarray, float) -> np.ndarray
    """Changed pixels, cleaned by a 3x3 opening followed by a 3x3 closing.

    :raises DimensionMismatch: feature maps of different shapes
    """
    raw = raw_change_mask(fa, fb, tau)
    opened = ndimage.binary_opening(raw, structure=_STRUCTURE)
    return ndimage.binary_closing(opened, structure=_STRUCTURE)


def refine_object_masks(change, proposals=None, min_area=DEFAULT_MIN_AREA):
    # type: (np.ndarray, Optional[Sequence[ObjectRegion]], int) -> List[ObjectRegion]
    """Object regions of one view.

    With proposals each one is intersected with the change mask and dropped
    below ``min_area`` pixels. Without proposals every 8-connected component of
    the change mask of at least ``min_area`` pixels becomes a region.
    """
    change = np.asarray(change, dtype=bool)
    regions = []  # type: List[ObjectRegion]
    if proposals is not None:
        for region_id, mask in proposals:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != change.shape:
                raise DimensionMismatch(
                    f"Proposal {region_id} is {mask.shape}, change mask is {change.shape}."
                )
            kept = mask & change
            if kept.sum() >= min_area:
                regions.append(ObjectRegion(region_id, kept))
        return regions

    labels, count = ndimage.label(change, structure=_STRUCTURE)
    for label in range(1, count + 1):
        mask = labels == label
        if mask.sum() >= min_area:
            regions.append(ObjectRegion(len(regions), mask))
    return regions
