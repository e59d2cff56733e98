"""Test the splatting renderer and its backward pass."""

from typing import Any, Callable

import numpy as np
import pytest

from scene_fusion.geom import Twist, se3_exp
from scene_fusion.render import (
    ALPHA_CAP,
    RenderPass,
    alignment_loss,
    photometric_loss,
    pose_gradient,
    render,
    render_backward,
)
from scene_fusion.scene import GaussianScene, ObjectSubset


def _single(depth=2.0, opacity=0.5, color=(1.0, 0.0, 0.0), x=0.0):
    # type: (float, float, tuple, float) -> GaussianScene
    return GaussianScene([[x, 0.0, depth]], [0.2], [color], [opacity], [0])


def test_empty_scene_renders_background(camera):
    # type: (Callable) -> None
    image, depth = render(GaussianScene.empty(), camera(), (0.2, 0.4, 0.6))
    assert np.allclose(image, (0.2, 0.4, 0.6))
    assert np.all(np.isinf(depth))


def test_primitive_behind_camera_is_culled(camera):
    # type: (Callable) -> None
    image, _ = render(_single(depth=-10.0), camera())
    assert np.all(image == 0.0)


def test_single_primitive_center_pixel(camera):
    # type: (Callable) -> None
    cam = camera(width=16, height=16, focal=30.0)
    # camera sits at z=-3 looking at the origin, so the primitive is 3 m away
    scene = GaussianScene([[0.0, 0.0, 0.0]], [0.2], [[1.0, 0.0, 0.0]], [0.5])
    forward = RenderPass(scene, cam)
    sigma = 30.0 * 0.2 / 3.0
    expected = 0.5 * np.exp(-0.5 / (2.0 * sigma * sigma))
    assert forward.image[8, 8, 0] == pytest.approx(expected)
    assert forward.image[8, 8, 1] == 0.0
    assert forward.coverage[8, 8] == pytest.approx(expected)
    # a single fragment never reaches half coverage
    assert np.isinf(forward.depth_buffer[8, 8])


def test_front_primitive_occludes(camera):
    # type: (Callable) -> None
    cam = camera(width=16, height=16, focal=30.0)
    scene = GaussianScene(
        [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]], [0.3, 0.1], [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]], [0.3, 1.0]
    )
    image, depth = render(scene, cam)
    assert image[8, 8, 0] > image[8, 8, 2]
    assert depth[8, 8] == pytest.approx(2.0)


def test_alpha_is_capped(camera):
    # type: (Callable) -> None
    cam = camera(width=16, height=16, focal=30.0)
    scene = GaussianScene([[0.0, 0.0, 0.0]], [0.5], [[1.0, 1.0, 1.0]], [1.0])
    image, _ = render(scene, cam, (0.0, 0.0, 0.0))
    assert image.max() <= ALPHA_CAP + 1e-12


def test_label_weights_sum_to_coverage(camera, random_scene):
    # type: (Callable, Callable) -> None
    scene = random_scene(count=12, labels=[0, 1, 2] * 4)
    forward = RenderPass(scene, camera(focal=30.0))
    weights = forward.label_weights(scene.instance_ids, 3)
    assert weights.shape == (16, 16, 3)
    assert np.allclose(weights.sum(axis=2), forward.coverage)


def test_render_is_deterministic(camera, random_scene):
    # type: (Callable, Callable) -> None
    scene, cam = random_scene(count=30), camera(focal=30.0)
    first, second = render(scene, cam)[0], render(scene, cam)[0]
    assert np.array_equal(first, second)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_render_ignores_storage_order(camera, random_scene, seed):
    # type: (Callable, Callable, int) -> None
    scene, cam = random_scene(count=40, seed=seed), camera(focal=30.0)
    order = np.random.default_rng(seed).permutation(len(scene))
    image, depth = render(scene, cam)
    shuffled_image, shuffled_depth = render(scene.subset(order), cam)
    assert np.allclose(image, shuffled_image, rtol=0.0, atol=1e-12)
    assert np.array_equal(np.isinf(depth), np.isinf(shuffled_depth))
    finite = np.isfinite(depth)
    assert np.allclose(depth[finite], shuffled_depth[finite], rtol=0.0, atol=1e-12)


def _check(analytic, numeric):
    # type: (np.ndarray, np.ndarray) -> None
    tolerance = 1e-3 * np.abs(numeric).max() + 1e-6
    assert np.abs(analytic - numeric).max() <= tolerance


@pytest.mark.parametrize("field", ["colors", "opacities", "positions", "scales"])
def test_backward_matches_finite_differences(camera, random_scene, field):
    # type: (Callable, Callable, str) -> None
    scene = random_scene(count=8, seed=3, spread=0.3)
    cam = camera(width=16, height=16, focal=30.0)
    background = (0.1, 0.2, 0.3)
    grad_image = np.random.default_rng(1).normal(size=(16, 16, 3))
    analytic = getattr(render_backward(scene, cam, grad_image, background), field)

    def loss(candidate):
        # type: (GaussianScene) -> float
        return float(np.sum(render(candidate, cam, background)[0] * grad_image))

    values = getattr(scene, field)
    numeric = np.zeros_like(values)
    eps = 1e-6
    for index in np.ndindex(values.shape):
        plus, minus = scene.copy(), scene.copy()
        getattr(plus, field)[index] += eps
        getattr(minus, field)[index] -= eps
        numeric[index] = (loss(plus) - loss(minus)) / (2.0 * eps)
    _check(analytic, numeric)


def test_pose_gradient_matches_finite_differences(camera, random_scene):
    # type: (Callable, Callable) -> None
    scene = random_scene(count=8, seed=5, spread=0.3)
    cams = [camera(focal=30.0), camera(eye=(3.0, 0.0, 0.0), focal=30.0)]
    targets = [np.random.default_rng(view).uniform(size=(16, 16, 3)) for view in range(2)]
    subset = ObjectSubset(0, [0, 2, 4, 6])
    _, grad = pose_gradient(scene, subset, Twist.zero(), cams, targets)
    numeric = np.zeros(6)
    eps = 1e-6
    for k in range(6):
        step = np.zeros(6)
        step[k] = eps
        numeric[k] = (
            alignment_loss(scene, subset, se3_exp(step), cams, targets)
            - alignment_loss(scene, subset, se3_exp(-step), cams, targets)
        ) / (2.0 * eps)
    _check(grad, numeric)


def test_photometric_loss_skips_empty_masks(camera, random_scene):
    # type: (Callable, Callable) -> None
    scene, cam = random_scene(count=5), camera(focal=30.0)
    target = np.ones((16, 16, 3))
    loss, grad = photometric_loss(scene, [cam], [target], [np.zeros((16, 16), dtype=bool)])
    assert loss == 0.0
    assert np.all(grad == 0.0)


def test_photometric_loss_without_gradient(camera, random_scene, mocker):
    # type: (Callable, Callable, Any) -> None
    scene, cams = random_scene(count=6), [camera(focal=30.0), camera(eye=(3.0, 0.0, 0.0), focal=30.0)]
    targets = [np.full((16, 16, 3), 0.5)] * 2
    expected, _ = photometric_loss(scene, cams, targets)
    backward = mocker.spy(RenderPass, "backward")

    loss, grad = photometric_loss(scene, cams, targets, with_grad=False)

    assert loss == expected
    assert np.all(grad == 0.0)
    assert backward.call_count == 0
