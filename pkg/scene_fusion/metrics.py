"""Image quality metrics and the per-state metrics row."""

from collections import namedtuple
from typing import Any, Dict, Optional  # pylint: disable=unused-import

import numpy as np

from .exceptions import DimensionMismatch, EmptyMask

MetricsRow = namedtuple(
    "MetricsRow",
    ["state_count", "psnr", "ssim", "wall_time_s", "peak_primitives", "peak_voxels", "stage_seconds"],
)
MetricsRow.__new__.__defaults__ = (None,)  # type: ignore


def psnr(a, b, mask=None):
    # type: (np.ndarray, np.ndarray, Optional[np.ndarray]) -> float
    """Peak signal-to-noise ratio in dB for a dynamic range of 1.

    :param mask: optional ``(H, W)`` boolean selection of pixels
    :return: ``inf`` for identical inputs
    :raises EmptyMask: the mask selects no pixel
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"Image shapes differ: {a.shape} vs {b.shape}.")
    diff = a - b
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape[:2]:
            raise DimensionMismatch(f"Mask {mask.shape} does not match image {a.shape[:2]}.")
        if not mask.any():
            raise EmptyMask("PSNR mask selects no pixel.")
        diff = diff[mask]
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def mean_finite(values):
    # type: (Any) -> float
    """Mean that stays ``inf`` when every value is infinite."""
    values = np.asarray(list(values), dtype=np.float64)
    finite = values[np.isfinite(values)]
    if not len(finite):
        return float("inf") if len(values) else float("nan")
    return float(finite.mean())
