"""Image and mask export through ``imageio``.

Buffers stay floating point in memory; quantization to 8 bit happens here only.
The file extension picks the format, PPM/PGM by default and PNG on request.
"""

import imageio.v2 as imageio
import numpy as np

from .exceptions import SceneFormatError


def to_bytes(image):
    # type: (np.ndarray) -> np.ndarray
    """Clamp to ``[0, 1]`` and quantize to ``uint8`` with round-half-up."""
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_image(path, image):
    # type: (str, np.ndarray) -> None
    """Write an ``(H, W, 3)`` float image; ``.ppm`` and ``.png`` both work."""
    imageio.imwrite(path, to_bytes(np.asarray(image, dtype=np.float64)))


def write_mask(path, mask):
    # type: (str, np.ndarray) -> None
    """Write a boolean mask with 0/255 values."""
    imageio.imwrite(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


write_ppm = write_image
write_pgm = write_mask


def _read(path):
    # type: (str) -> np.ndarray
    try:
        return np.asarray(imageio.imread(path))
    except (OSError, ValueError, SyntaxError) as error:
        raise SceneFormatError(f"{path}: {error}", field="header", original_exc=error)  # pylint: disable=raise-missing-from


def read_image(path):
    # type: (str) -> np.ndarray
    """Read an RGB file into an ``(H, W, 3)`` float image in ``[0, 1]``."""
    data = _read(path)
    if data.ndim != 3 or data.shape[2] != 3:
        raise SceneFormatError(f"{path}: expected an RGB image, got shape {data.shape}.", field="channels")
    return data.astype(np.float64) / 255.0


def read_mask(path):
    # type: (str) -> np.ndarray
    """Read a single-channel mask; non-zero pixels are ``True``."""
    data = _read(path)
    if data.ndim != 2:
        raise SceneFormatError(f"{path}: expected a single-channel mask, got shape {data.shape}.", field="channels")
    return data > 0


read_ppm = read_image
read_pgm = read_mask
