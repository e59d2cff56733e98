"""Just a conftest."""

from typing import Any, Callable

import numpy as np
import pytest

from scene_fusion.geom import Camera, RigidTransform, look_at
from scene_fusion.scene import GaussianScene
from scene_fusion.synth import CameraRigSpec, ObjectSpec, SceneSpec, StateScript, generate


def pytest_configure(config):
    # type: (Any) -> None
    config.addinivalue_line("markers", "slow: long-running trend experiments")


@pytest.fixture(scope="function")
def camera():
    # type: () -> Callable
    def inner(width=16, height=16, eye=(0.0, 0.0, -3.0), target=(0.0, 0.0, 0.0), focal=20.0):
        # type: (int, int, Any, Any, float) -> Camera
        return Camera(focal, focal, width / 2.0, height / 2.0, width, height, look_at(eye, target, (0.0, -1.0, 0.0)))

    return inner


@pytest.fixture(scope="function")
def random_scene():
    # type: () -> Callable
    def inner(count=10, seed=0, spread=0.5, labels=None):
        # type: (int, int, float, Any) -> GaussianScene
        rng = np.random.default_rng(seed)
        return GaussianScene(
            rng.uniform(-spread, spread, size=(count, 3)),
            rng.uniform(0.08, 0.2, size=count),
            rng.uniform(0.1, 0.9, size=(count, 3)),
            rng.uniform(0.3, 0.9, size=count),
            labels,
        )

    return inner


@pytest.fixture(scope="function")
def identity_camera():
    # type: () -> Camera
    return Camera(100.0, 100.0, 50.0, 50.0, 100, 100, RigidTransform.identity())


def small_rig():
    # type: () -> CameraRigSpec
    return CameraRigSpec(count=6, fx=20.0, fy=20.0, width=32, height_px=24)


def small_spec(objects=None):
    # type: (Any) -> SceneSpec
    if objects is None:
        objects = [
            ObjectSpec(0, "sphere", 0.3, primitive_count=60, pose=RigidTransform.from_translation((-0.3, -0.2, 0.16))),
            ObjectSpec(1, "box", 0.25, primitive_count=60, pose=RigidTransform.from_translation((0.35, 0.3, 0.14))),
        ]
    return SceneSpec(objects=objects, surface_spacing=0.15)


@pytest.fixture(scope="function")
def ground_truth():
    # type: () -> Callable
    def inner(script=None, seed=0, objects=None):
        # type: (Any, int, Any) -> Any
        return generate(small_spec(objects), small_rig(), script or StateScript(), seed)

    return inner
