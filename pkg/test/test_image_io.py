"""Test the image and mask export."""

import os
from typing import Any

import numpy as np
import pytest

from scene_fusion.exceptions import SceneFormatError
from scene_fusion.image_io import read_image, read_pgm, read_ppm, to_bytes, write_image, write_pgm, write_ppm


@pytest.mark.parametrize(
    "value, expected",
    [(-0.5, 0), (0.0, 0), (0.5, 128), (1.0, 255), (2.0, 255), (1.0 / 255.0, 1)],
)
def test_to_bytes(value, expected):
    # type: (float, int) -> None
    assert to_bytes(np.array([value]))[0] == expected


def test_ppm_header_and_payload(tmpdir):
    # type: (Any) -> None
    image = np.zeros((2, 3, 3))
    image[0, 1] = (1.0, 0.5, 0.0)
    path = os.path.join(str(tmpdir), "image.ppm")
    write_ppm(path, image)
    with open(path, "rb") as handle:
        payload = handle.read()
    assert payload.startswith(b"P6")
    assert payload.endswith(to_bytes(image).tobytes())
    restored = read_ppm(path)
    assert restored.shape == (2, 3, 3)
    assert np.allclose(restored, to_bytes(image) / 255.0)


def test_png_round_trip(tmpdir):
    # type: (Any) -> None
    image = np.random.default_rng(0).uniform(size=(4, 5, 3))
    path = os.path.join(str(tmpdir), "image.png")
    write_image(path, image)
    assert np.array_equal(read_image(path), to_bytes(image) / 255.0)


def test_pgm_mask(tmpdir):
    # type: (Any) -> None
    mask = np.array([[True, False], [False, True]])
    path = os.path.join(str(tmpdir), "mask.pgm")
    write_pgm(path, mask)
    with open(path, "rb") as handle:
        assert handle.read().startswith(b"P5")
    assert np.array_equal(read_pgm(path), mask)


def test_mask_is_not_an_image(tmpdir):
    # type: (Any) -> None
    path = os.path.join(str(tmpdir), "mask.pgm")
    write_pgm(path, np.ones((2, 2), dtype=bool))
    with pytest.raises(SceneFormatError):
        read_ppm(path)


def test_unreadable_file(tmpdir):
    # type: (Any) -> None
    path = os.path.join(str(tmpdir), "broken.ppm")
    with open(path, "wb") as handle:
        handle.write(b"P6\nnot an image")
    with pytest.raises(SceneFormatError):
        read_ppm(path)
