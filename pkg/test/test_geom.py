"""Test the rigid-body and camera helpers."""

from typing import Any, Callable

import numpy as np
import pytest

from scene_fusion import geom
from scene_fusion.exceptions import AngleNearPi, BehindCamera, InvalidCamera, PixelOutOfBounds
from scene_fusion.geom import Camera, RigidTransform, Twist


def _random_twists(count, seed=0, max_angle=2.5):
    # type: (int, int, float) -> Any
    rng = np.random.default_rng(seed)
    for _ in range(count):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        yield Twist(rng.normal(size=3), axis * rng.uniform(0.0, max_angle))


@pytest.mark.parametrize("xi", list(_random_twists(20)))
def test_se3_log_inverts_exp(xi):
    # type: (Twist) -> None
    recovered = geom.se3_log(geom.se3_exp(xi))
    assert np.allclose(recovered.as_vector(), xi.as_vector(), atol=1e-9)


def test_se3_round_trip_over_many_samples():
    # type: () -> None
    for xi in _random_twists(1000, seed=7, max_angle=3.0):
        transform = geom.se3_exp(xi)
        assert np.abs(geom.se3_log(transform).as_vector() - xi.as_vector()).max() < 1e-9
        assert np.allclose(transform.rotation @ transform.rotation.T, np.eye(3), atol=1e-9)
        assert np.allclose(geom.se3_exp(geom.se3_log(transform)).matrix(), transform.matrix(), atol=1e-10)


@pytest.mark.parametrize("omega", [np.zeros(3), np.array([1e-10, 0.0, 0.0]), np.array([0.0, 0.3, -0.2])])
def test_so3_exp_is_rotation(omega):
    # type: (np.ndarray) -> None
    rotation = geom.so3_exp(omega)
    assert np.allclose(rotation @ rotation.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(rotation), 1.0)


def test_exp_of_zero_is_identity():
    # type: () -> None
    transform = geom.se3_exp(Twist.zero())
    assert np.allclose(transform.matrix(), np.eye(4))


def test_pure_translation_twist():
    # type: () -> None
    transform = geom.se3_exp(np.array([0.1, -0.2, 0.3, 0.0, 0.0, 0.0]))
    assert np.allclose(transform.rotation, np.eye(3))
    assert np.allclose(transform.translation, [0.1, -0.2, 0.3])


def test_log_near_pi_raises():
    # type: () -> None
    rotation = geom.so3_exp(np.array([0.0, 0.0, np.pi - 1e-8]))
    with pytest.raises(AngleNearPi):
        geom.so3_log(rotation)


def test_hat_vee():
    # type: () -> None
    v = np.array([1.0, -2.0, 0.5])
    p = np.array([0.3, 0.1, -0.7])
    assert np.allclose(geom.hat(v) @ p, np.cross(v, p))
    assert np.allclose(geom.vee(geom.hat(v)), v)


def test_compose_order_and_inverse():
    # type: () -> None
    a, b, c = (geom.se3_exp(xi) for xi in _random_twists(3, seed=1))
    p = np.array([0.2, 0.4, -1.0])
    assert np.allclose(geom.transform_point(geom.compose(a, b), p), geom.transform_point(a, geom.transform_point(b, p)))
    assert np.allclose(geom.compose(a, geom.inverse(a)).matrix(), np.eye(4), atol=1e-12)
    assert np.allclose(geom.compose_all([a, b, c]).matrix(), geom.compose(c, geom.compose(b, a)).matrix())
    assert np.allclose(geom.compose_all([]).matrix(), np.eye(4))


def test_transform_point_batch_matches_single():
    # type: () -> None
    transform = geom.se3_exp(next(_random_twists(1, seed=3)))
    points = np.random.default_rng(0).normal(size=(5, 3))
    batch = geom.transform_point(transform, points)
    for row, point in zip(batch, points):
        assert np.allclose(row, geom.transform_point(transform, point))


def test_pose_error():
    # type: () -> None
    truth = RigidTransform.from_translation((1.0, 0.0, 0.0))
    estimate = RigidTransform(geom.so3_exp(np.array([0.0, 0.0, np.radians(10.0)])), (1.0, 0.3, 0.0))
    degrees, meters = geom.pose_error(estimate, truth)
    assert degrees == pytest.approx(10.0)
    assert meters == pytest.approx(0.3)


def test_transform_list_round_trip():
    # type: () -> None
    transform = geom.se3_exp(next(_random_twists(1, seed=5)))
    assert np.allclose(RigidTransform.from_list(transform.to_list()).matrix(), transform.matrix(), atol=1e-11)
    with pytest.raises(ValueError):
        RigidTransform.from_list([1.0, 2.0])


def test_project_principal_point(identity_camera):
    # type: (Camera) -> None
    u, v, depth = geom.project(identity_camera, (0.0, 0.0, 2.0))
    assert (u, v, depth) == (50.0, 50.0, 2.0)


@pytest.mark.parametrize("z", [0.0, -1.0, 1e-4])
def test_project_behind_camera(identity_camera, z):
    # type: (Camera, float) -> None
    with pytest.raises(BehindCamera):
        geom.project(identity_camera, (0.0, 0.0, z))


def test_project_points_marks_invalid(identity_camera):
    # type: (Camera) -> None
    _, _, depth, valid = geom.project_points(identity_camera, [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    assert valid.tolist() == [True, False]
    assert depth.tolist() == [1.0, -1.0]


def test_pixel_ray_reprojects(camera):
    # type: (Callable) -> None
    cam = camera(width=32, height=24, eye=(0.5, -2.0, 1.0), target=(0.0, 0.0, 0.0))
    origin, direction = geom.pixel_ray(cam, 7, 13)
    assert np.isclose(np.linalg.norm(direction), 1.0)
    assert np.allclose(origin, cam.center)
    u, v, _ = geom.project(cam, origin + 2.0 * direction)
    assert (u, v) == pytest.approx((7.5, 13.5))


def test_pixel_rays_order(camera):
    # type: (Callable) -> None
    cam = camera(width=8, height=6)
    _, directions = geom.pixel_rays(cam)
    assert directions.shape == (48, 3)
    assert np.allclose(directions[9], geom.pixel_ray(cam, 1, 1)[1])


@pytest.mark.parametrize("u, v", [(-1, 0), (0, 16), (16, 3)])
def test_pixel_ray_out_of_bounds(camera, u, v):
    # type: (Callable, int, int) -> None
    with pytest.raises(PixelOutOfBounds):
        geom.pixel_ray(camera(), u, v)


@pytest.mark.parametrize(
    "fx, width, height, cx",
    [(0.0, 10, 10, 5.0), (10.0, 0, 10, 0.0), (10.0, 10, 10, 10.0), (10.0, 10, 10, -0.5)],
)
def test_invalid_camera(fx, width, height, cx):
    # type: (float, int, int, float) -> None
    with pytest.raises(InvalidCamera):
        Camera(fx, 10.0, cx, 0.0, width, height)


def test_look_at_center_and_forward(camera):
    # type: (Callable) -> None
    cam = camera(eye=(1.0, 2.0, 3.0), target=(0.0, 0.0, 0.0))
    assert np.allclose(cam.center, [1.0, 2.0, 3.0])
    forward = cam.world_to_camera.rotation[2]
    assert np.allclose(forward, -np.array([1.0, 2.0, 3.0]) / np.sqrt(14.0))


def test_camera_dict_round_trip(camera):
    # type: (Callable) -> None
    cam = camera(eye=(0.3, 0.2, -2.0))
    restored = Camera.from_dict(cam.to_dict())
    assert restored.width == cam.width
    assert np.allclose(restored.world_to_camera.matrix(), cam.world_to_camera.matrix(), atol=1e-11)
