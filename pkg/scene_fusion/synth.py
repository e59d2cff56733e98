"""Deterministic room-and-objects scenes with per-state ground truth.

A room is a floor plus four walls sampled as unlabeled Gaussians on a jittered
lattice. Objects are labeled sphere or box clusters. A :class:`StateScript`
moves, adds and removes objects step by step; every state is rendered from a
camera ring and instance masks are taken from the renderer's label weights.
"""

import os
from collections import namedtuple
from typing import Any, Dict, List, Optional, Sequence, Tuple  # pylint: disable=unused-import

import numpy as np
import simplejson as json

from .change import ObjectRegion
from .exceptions import ConfigError, ObjectOutsideRoom
from .geom import Camera, RigidTransform, compose, look_at, so3_exp, transform_point
from .image_io import read_pgm, read_ppm, write_pgm, write_ppm
from .render import RenderPass
from .scene import GaussianScene, apply_transform, load_scene, save_scene
from .utils import make_rng

SURFACE_SCALE = 0.03
SURFACE_OPACITY = 0.9
OBJECT_OPACITY = 0.95
WALL_NOISE = 0.02
OBJECT_NOISE = 0.02
MASK_WEIGHT = 0.5
SHAPES = ("sphere", "box")
PALETTE = (
    (0.85, 0.15, 0.15),
    (0.15, 0.65, 0.2),
    (0.15, 0.3, 0.85),
    (0.9, 0.75, 0.1),
    (0.7, 0.2, 0.75),
    (0.1, 0.75, 0.8),
)
TEST_PLACEMENT_ATTEMPTS = 100


class ObjectSpec(namedtuple("ObjectSpec", ["object_id", "shape", "size", "color", "primitive_count", "pose"])):
    """One labeled object; ``size`` is the diameter or edge length in meters."""

    __slots__ = ()

    def __new__(cls, object_id, shape="sphere", size=0.3, color=None, primitive_count=200, pose=None):
        # type: (int, str, float, Optional[Sequence[float]], int, Optional[RigidTransform]) -> ObjectSpec
        if shape not in SHAPES:
            raise ConfigError(f"Unknown shape {shape!r}, expected one of {SHAPES}.")
        if int(primitive_count) < 20:
            raise ConfigError(f"Object {object_id} needs at least 20 primitives.")
        if size <= 0:
            raise ConfigError(f"Object {object_id} size must be positive.")
        if color is None:
            color = PALETTE[int(object_id) % len(PALETTE)]
        return super(ObjectSpec, cls).__new__(
            cls,
            int(object_id),
            shape,
            float(size),
            tuple(float(value) for value in color),
            int(primitive_count),
            pose or RigidTransform.identity(),
        )

    def to_dict(self):
        # type: () -> Dict[str, Any]
        return {
            "object_id": self.object_id,
            "shape": self.shape,
            "size": self.size,
            "color": list(self.color),
            "primitive_count": self.primitive_count,
            "pose": self.pose.to_list(),
        }

    @classmethod
    def from_dict(cls, data):
        # type: (Dict[str, Any]) -> ObjectSpec
        data = dict(data)
        if "pose" in data:
            data["pose"] = RigidTransform.from_list(data["pose"])
        elif "position" in data:
            data["pose"] = RigidTransform.from_translation(data.pop("position"))
        unknown = sorted(set(data) - set(cls._fields))
        if unknown:
            raise ConfigError(f"Unknown ObjectSpec keys: {', '.join(unknown)}.")
        return cls(**data)


class SceneSpec(
    namedtuple("SceneSpec", ["half_extents", "floor_color", "wall_color", "objects", "surface_spacing"])
):
    """Room box ``[-hx, hx] x [-hy, hy] x [0, hz]`` and the objects of state 0."""

    __slots__ = ()

    def __new__(
        cls,
        half_extents=(1.0, 1.0, 0.8),
        floor_color=(0.55, 0.5, 0.45),
        wall_color=(0.75, 0.75, 0.7),
        objects=(),
        surface_spacing=0.06,
    ):
        # type: (Sequence[float], Sequence[float], Sequence[float], Sequence[ObjectSpec], float) -> SceneSpec
        extents = tuple(float(value) for value in half_extents)
        if len(extents) != 3 or min(extents) <= 0:
            raise ConfigError("half_extents must hold three positive values.")
        if surface_spacing <= 0:
            raise ConfigError("surface_spacing must be positive.")
        ids = [spec.object_id for spec in objects]
        if len(set(ids)) != len(ids):
            raise ConfigError("Object ids must be unique.")
        return super(SceneSpec, cls).__new__(
            cls,
            extents,
            tuple(float(value) for value in floor_color),
            tuple(float(value) for value in wall_color),
            tuple(objects),
            float(surface_spacing),
        )

    def to_dict(self):
        # type: () -> Dict[str, Any]
        return {
            "half_extents": list(self.half_extents),
            "floor_color": list(self.floor_color),
            "wall_color": list(self.wall_color),
            "objects": [spec.to_dict() for spec in self.objects],
            "surface_spacing": self.surface_spacing,
        }

    @classmethod
    def from_dict(cls, data):
        # type: (Dict[str, Any]) -> SceneSpec
        data = dict(data)
        unknown = sorted(set(data) - set(cls._fields))
        if unknown:
            raise ConfigError(f"Unknown SceneSpec keys: {', '.join(unknown)}.")
        data["objects"] = [ObjectSpec.from_dict(spec) for spec in data.get("objects", [])]
        return cls(**data)


class CameraRigSpec(
    namedtuple("CameraRigSpec", ["count", "radius", "height", "target", "fx", "fy", "width", "height_px"])
):
    """Ring of inward-looking pinhole cameras."""

    __slots__ = ()

    def __new__(
        cls,
        count=12,
        radius=0.85,
        height=0.7,
        target=(0.0, 0.0, 0.15),
        fx=80.0,
        fy=80.0,
        width=128,
        height_px=128,
    ):
        # type: (int, float, float, Sequence[float], float, float, int, int) -> CameraRigSpec
        if int(count) < 2:
            raise ConfigError(f"A rig needs at least 2 cameras, got {count}.")
        return super(CameraRigSpec, cls).__new__(
            cls,
            int(count),
            float(radius),
            float(height),
            tuple(float(value) for value in target),
            float(fx),
            float(fy),
            int(width),
            int(height_px),
        )

    def cameras(self, offset=0.0):
        # type: (float) -> List[Camera]
        """Ring cameras; ``offset`` rotates the ring by that fraction of one step."""
        step = 2.0 * np.pi / self.count
        cams = []
        for index in range(self.count):
            angle = (index + offset) * step
            eye = (self.radius * np.cos(angle), self.radius * np.sin(angle), self.height)
            cams.append(
                Camera(
                    self.fx,
                    self.fy,
                    self.width / 2.0,
                    self.height_px / 2.0,
                    self.width,
                    self.height_px,
                    look_at(eye, self.target),
                )
            )
        return cams

    def to_dict(self):
        # type: () -> Dict[str, Any]
        data = dict(self._asdict())
        data["target"] = list(self.target)
        return data

    @classmethod
    def from_dict(cls, data):
        # type: (Dict[str, Any]) -> CameraRigSpec
        unknown = sorted(set(data) - set(cls._fields))
        if unknown:
            raise ConfigError(f"Unknown CameraRigSpec keys: {', '.join(unknown)}.")
        return cls(**data)


class Action(namedtuple("Action", ["kind", "object_id", "transform", "spec"])):
    """One scripted change; build it with :meth:`move`, :meth:`add` or :meth:`remove`."""

    __slots__ = ()

    @classmethod
    def move(cls, object_id, transform):
        # type: (int, RigidTransform) -> Action
        return cls("move", int(object_id), transform, None)

    @classmethod
    def add(cls, spec):
        # type: (ObjectSpec) -> Action
        return cls("add", spec.object_id, None, spec)

    @classmethod
    def remove(cls, object_id):
        # type: (int) -> Action
        return cls("remove", int(object_id), None, None)

    def to_dict(self):
        # type: () -> Dict[str, Any]
        if self.kind == "move":
            return {"move": self.object_id, "transform": self.transform.to_list()}
        if self.kind == "add":
            return {"add": self.spec.to_dict()}
        return {"remove": self.object_id}

    @classmethod
    def from_dict(cls, data):
        # type: (Dict[str, Any]) -> Action
        if "move" in data:
            return cls.move(data["move"], RigidTransform.from_list(data["transform"]))
        if "add" in data:
            return cls.add(ObjectSpec.from_dict(data["add"]))
        if "remove" in data:
            return cls.remove(data["remove"])
        raise ConfigError(f"Unknown action {data!r}.")


StateScript = namedtuple("StateScript", ["steps"])
StateScript.__new__.__defaults__ = ((),)  # type: ignore


def script_to_list(script):
    # type: (StateScript) -> List[List[Dict[str, Any]]]
    return [[action.to_dict() for action in step] for step in script.steps]


def script_from_list(data):
    # type: (Sequence[Sequence[Dict[str, Any]]]) -> StateScript
    return StateScript(tuple(tuple(Action.from_dict(action) for action in step) for step in data))


GroundTruth = namedtuple(
    "GroundTruth",
    [
        "scenes",
        "images",
        "masks",
        "transforms",
        "cameras",
        "test_cameras",
        "test_scene",
        "test_images",
        "test_transforms",
        "seed",
    ],
)
GroundTruth.__doc__ = """Per-state scenes, renders and instance masks.

``masks[k][object_id][view]`` is a boolean silhouette; ``transforms[k]`` maps
object ids to the world-frame transform applied between states ``k`` and
``k + 1``; ``test_transforms`` move the final state into the test state.
"""


def yaw_about(center, angle, translation=(0.0, 0.0, 0.0)):
    # type: (Any, float, Any) -> RigidTransform
    """Rotation about the vertical axis through ``center``, then a translation."""
    center = np.asarray(center, dtype=np.float64)
    rotation = so3_exp(np.array([0.0, 0.0, angle]))
    return RigidTransform(rotation, center - rotation @ center + np.asarray(translation, dtype=np.float64))


def _lattice(rng, u_range, v_range, spacing):
    # type: (np.random.Generator, Tuple[float, float], Tuple[float, float], float) -> np.ndarray
    us = np.arange(u_range[0] + spacing / 2.0, u_range[1], spacing)
    vs = np.arange(v_range[0] + spacing / 2.0, v_range[1], spacing)
    grid = np.stack(np.meshgrid(us, vs, indexing="ij"), axis=-1).reshape(-1, 2)
    return grid + rng.uniform(-0.25 * spacing, 0.25 * spacing, size=grid.shape)


def _surface(rng, points, color, noise=WALL_NOISE):
    # type: (np.random.Generator, np.ndarray, Sequence[float], float) -> GaussianScene
    colors = np.clip(np.asarray(color) + rng.normal(0.0, noise, size=(len(points), 3)), 0.0, 1.0)
    return GaussianScene(
        points,
        np.full(len(points), SURFACE_SCALE),
        colors,
        np.full(len(points), SURFACE_OPACITY),
    )


def room_scene(spec, rng):
    # type: (SceneSpec, np.random.Generator) -> GaussianScene
    """Unlabeled floor and walls of the room."""
    hx, hy, hz = spec.half_extents
    spacing = spec.surface_spacing
    floor = _lattice(rng, (-hx, hx), (-hy, hy), spacing)
    parts = [_surface(rng, np.column_stack([floor, np.zeros(len(floor))]), spec.floor_color)]
    for sign in (-1.0, 1.0):
        wall = _lattice(rng, (-hy, hy), (0.0, hz), spacing)
        points = np.column_stack([np.full(len(wall), sign * hx), wall[:, 0], wall[:, 1]])
        parts.append(_surface(rng, points, spec.wall_color))
        wall = _lattice(rng, (-hx, hx), (0.0, hz), spacing)
        points = np.column_stack([wall[:, 0], np.full(len(wall), sign * hy), wall[:, 1]])
        parts.append(_surface(rng, points, spec.wall_color))
    scene = parts[0]
    for part in parts[1:]:
        scene = scene.concat(part)
    return scene


def _object_points(spec, rng):
    # type: (ObjectSpec, np.random.Generator) -> np.ndarray
    count = spec.primitive_count
    half = spec.size / 2.0
    if spec.shape == "sphere":
        # Fibonacci lattice
        index = np.arange(count) + 0.5
        polar = np.arccos(1.0 - 2.0 * index / count)
        azimuth = np.pi * (1.0 + 5.0 ** 0.5) * index
        unit = np.column_stack(
            [np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)]
        )
        return half * unit
    faces = rng.integers(0, 6, size=count)
    points = rng.uniform(-half, half, size=(count, 3))
    axes = faces // 2
    points[np.arange(count), axes] = np.where(faces % 2 == 0, -half, half)
    return points


def object_scene(spec, rng):
    # type: (ObjectSpec, np.random.Generator) -> GaussianScene
    """Labeled cluster of ``spec`` in object-local coordinates."""
    local = _object_points(spec, rng)
    spacing = spec.size * np.sqrt(np.pi / spec.primitive_count)
    colors = np.clip(np.asarray(spec.color) + rng.normal(0.0, OBJECT_NOISE, size=(len(local), 3)), 0.0, 1.0)
    return GaussianScene(
        local,
        np.full(len(local), max(0.6 * spacing, 1e-3)),
        colors,
        np.full(len(local), OBJECT_OPACITY),
        np.full(len(local), spec.object_id),
    )


def _check_inside(spec, object_id, points):
    # type: (SceneSpec, int, np.ndarray) -> None
    hx, hy, hz = spec.half_extents
    low = np.array([-hx, -hy, 0.0])
    high = np.array([hx, hy, hz])
    if np.any(points < low) or np.any(points > high):
        raise ObjectOutsideRoom(f"Object {object_id} leaves the room.")


def _compose_scene(room, clusters, poses, state_index):
    # type: (GaussianScene, Dict[int, GaussianScene], Dict[int, RigidTransform], int) -> GaussianScene
    scene = room.copy(state_index=state_index)
    for object_id in sorted(poses):
        placed = clusters[object_id].copy()
        placed.positions = transform_point(poses[object_id], placed.positions)
        scene = scene.concat(placed)
    return scene


def instance_masks(forward, object_ids):
    # type: (RenderPass, Sequence[int]) -> Dict[int, np.ndarray]
    """Silhouettes where one object owns more than half of the blend weight.

    Weights of one pixel sum to at most one, so silhouettes never overlap.
    """
    if not object_ids:
        return {}
    weights = forward.label_weights(forward.scene.instance_ids, max(object_ids) + 1)
    return {object_id: weights[..., object_id] > MASK_WEIGHT for object_id in object_ids}


def _render_state(scene, cams):
    # type: (GaussianScene, Sequence[Camera]) -> Tuple[List[np.ndarray], Dict[int, List[np.ndarray]]]
    ids = scene.object_ids()
    images = []
    masks = {object_id: [] for object_id in ids}  # type: Dict[int, List[np.ndarray]]
    for cam in cams:
        forward = RenderPass(scene, cam)
        images.append(forward.image)
        for object_id, mask in instance_masks(forward, ids).items():
            masks[object_id].append(mask)
    return images, masks


def _centroid(scene, object_id):
    # type: (GaussianScene, int) -> np.ndarray
    return scene.positions[scene.instance_ids == object_id].mean(axis=0)


def _test_transforms(spec, scene, moved_ids, rng):
    # type: (SceneSpec, GaussianScene, Sequence[int], np.random.Generator) -> Dict[int, RigidTransform]
    hx, hy, _ = spec.half_extents
    radius = {
        object_id: float(np.max(np.linalg.norm(
            scene.positions[scene.instance_ids == object_id] - _centroid(scene, object_id), axis=1
        )))
        for object_id in scene.object_ids()
    }
    centers = {object_id: _centroid(scene, object_id) for object_id in scene.object_ids()}
    transforms = {}
    for object_id in moved_ids:
        members = scene.positions[scene.instance_ids == object_id]
        center = centers[object_id]
        for _ in range(TEST_PLACEMENT_ATTEMPTS):
            shift = np.array([rng.uniform(-0.3, 0.3) * hx, rng.uniform(-0.3, 0.3) * hy, 0.0])
            candidate = yaw_about(center, rng.uniform(-np.pi / 2.0, np.pi / 2.0), shift)
            placed = transform_point(candidate, members)
            moved_center = center + shift
            apart = all(
                np.linalg.norm((moved_center - centers[other])[:2]) > radius[object_id] + radius[other]
                for other in centers
                if other != object_id
            )
            try:
                _check_inside(spec, object_id, placed)
            except ObjectOutsideRoom:
                continue
            if apart:
                transforms[object_id] = candidate
                centers[object_id] = moved_center
                break
    return transforms


def generate(spec, rig=None, script=None, seed=0):
    # type: (SceneSpec, Optional[CameraRigSpec], Optional[StateScript], int) -> GroundTruth
    """Build every state of ``script`` and render it.

    :raises ObjectOutsideRoom: an object is placed or moved outside the room
    """
    rig = rig or CameraRigSpec()
    script = script or StateScript()
    rng = make_rng(seed)
    room = room_scene(spec, rng)
    clusters = {}  # type: Dict[int, GaussianScene]
    poses = {}  # type: Dict[int, RigidTransform]

    def place(object_spec):
        # type: (ObjectSpec) -> None
        clusters[object_spec.object_id] = object_scene(object_spec, rng)
        poses[object_spec.object_id] = object_spec.pose

    for object_spec in spec.objects:
        place(object_spec)
    scenes = [_compose_scene(room, clusters, poses, 0)]
    transforms = []  # type: List[Dict[int, RigidTransform]]
    moved_ids = set()
    for state, step in enumerate(script.steps, start=1):
        applied = {}  # type: Dict[int, RigidTransform]
        for action in step:
            if action.kind == "add":
                place(action.spec)
            elif action.object_id not in poses:
                raise ConfigError(f"Step {state} references unknown object {action.object_id}.")
            elif action.kind == "move":
                poses[action.object_id] = compose(action.transform, poses[action.object_id])
                applied[action.object_id] = action.transform
                moved_ids.add(action.object_id)
            else:
                del poses[action.object_id]
        transforms.append(applied)
        scenes.append(_compose_scene(room, clusters, poses, state))
    for scene in scenes:
        for object_id in scene.object_ids():
            _check_inside(spec, object_id, scene.positions[scene.instance_ids == object_id])

    cams = rig.cameras()
    rendered = [_render_state(scene, cams) for scene in scenes]
    final = scenes[-1]
    live = sorted(object_id for object_id in moved_ids if object_id in poses)
    test_transforms = _test_transforms(spec, final, live, rng)
    test_scene = final.copy(state_index=len(scenes))
    for object_id, transform in sorted(test_transforms.items()):
        test_scene = apply_transform(test_scene, test_scene.membership(object_id), transform)
    test_cameras = rig.cameras(offset=0.5)
    test_images = [RenderPass(test_scene, cam).image for cam in test_cameras]
    return GroundTruth(
        scenes=scenes,
        images=[images for images, _ in rendered],
        masks=[masks for _, masks in rendered],
        transforms=transforms,
        cameras=cams,
        test_cameras=test_cameras,
        test_scene=test_scene,
        test_images=test_images,
        test_transforms=test_transforms,
        seed=seed,
    )


def _moved(gt, a, b, object_id):
    # type: (GroundTruth, int, int, int) -> bool
    first = gt.scenes[a].positions[gt.scenes[a].instance_ids == object_id]
    second = gt.scenes[b].positions[gt.scenes[b].instance_ids == object_id]
    return first.shape != second.shape or not np.array_equal(first, second)


def gt_change_mask(gt, a, b, view):
    # type: (GroundTruth, int, int, int) -> np.ndarray
    """Silhouettes, in both states, of objects whose pose or presence differs."""
    cam = gt.cameras[view]
    mask = np.zeros((cam.height, cam.width), dtype=bool)
    for object_id in sorted(set(gt.masks[a]) | set(gt.masks[b])):
        if not _moved(gt, a, b, object_id):
            continue
        for state in (a, b):
            if object_id in gt.masks[state]:
                mask |= gt.masks[state][object_id][view]
    return mask


def gt_proposals(gt, state):
    # type: (GroundTruth, int) -> List[List[ObjectRegion]]
    """Per-view instance masks of ``state`` as region proposals."""
    masks = gt.masks[state]
    return [
        [ObjectRegion(object_id, masks[object_id][view]) for object_id in sorted(masks)]
        for view in range(len(gt.cameras))
    ]


def _transforms_to_json(transforms):
    # type: (Dict[int, RigidTransform]) -> Dict[str, List[float]]
    return {str(object_id): transform.to_list() for object_id, transform in sorted(transforms.items())}


def _transforms_from_json(data):
    # type: (Dict[str, List[float]]) -> Dict[int, RigidTransform]
    return {int(object_id): RigidTransform.from_list(values) for object_id, values in data.items()}


def _write_views(directory, images):
    # type: (str, Sequence[np.ndarray]) -> None
    for view, image in enumerate(images):
        write_ppm(os.path.join(directory, f"view_{view}.ppm"), image)


def save_ground_truth(gt, directory):
    # type: (GroundTruth, str) -> None
    """Write ``states/k/``, ``transforms.json``, ``cameras.json`` and ``test_state/``."""
    for state, scene in enumerate(gt.scenes):
        folder = os.path.join(directory, "states", str(state))
        os.makedirs(folder, exist_ok=True)
        save_scene(scene, os.path.join(folder, "scene.gsc"))
        _write_views(folder, gt.images[state])
        for object_id, views in sorted(gt.masks[state].items()):
            for view, mask in enumerate(views):
                write_pgm(os.path.join(folder, f"mask_obj_{object_id}_view_{view}.pgm"), mask)
    with open(os.path.join(directory, "transforms.json"), "w", encoding="utf-8") as handle:
        json.dump([_transforms_to_json(step) for step in gt.transforms], handle, indent=2)
    with open(os.path.join(directory, "cameras.json"), "w", encoding="utf-8") as handle:
        json.dump(
            {
                "seed": gt.seed,
                "cameras": [cam.to_dict() for cam in gt.cameras],
                "test_cameras": [cam.to_dict() for cam in gt.test_cameras],
            },
            handle,
            indent=2,
        )
    folder = os.path.join(directory, "test_state")
    os.makedirs(folder, exist_ok=True)
    save_scene(gt.test_scene, os.path.join(folder, "scene.gsc"))
    _write_views(folder, gt.test_images)
    with open(os.path.join(folder, "transforms.json"), "w", encoding="utf-8") as handle:
        json.dump(_transforms_to_json(gt.test_transforms), handle, indent=2)


def load_ground_truth(directory):
    # type: (str) -> GroundTruth
    """Read what :func:`save_ground_truth` wrote; images come back 8-bit quantized."""
    with open(os.path.join(directory, "cameras.json"), "r", encoding="utf-8") as handle:
        rig = json.load(handle)
    cams = [Camera.from_dict(cam) for cam in rig["cameras"]]
    test_cams = [Camera.from_dict(cam) for cam in rig["test_cameras"]]
    with open(os.path.join(directory, "transforms.json"), "r", encoding="utf-8") as handle:
        transforms = [_transforms_from_json(step) for step in json.load(handle)]

    scenes, images, masks = [], [], []
    for state in range(len(transforms) + 1):
        folder = os.path.join(directory, "states", str(state))
        scene = load_scene(os.path.join(folder, "scene.gsc"))
        scenes.append(scene)
        images.append([read_ppm(os.path.join(folder, f"view_{view}.ppm")) for view in range(len(cams))])
        masks.append(
            {
                object_id: [
                    read_pgm(os.path.join(folder, f"mask_obj_{object_id}_view_{view}.pgm"))
                    for view in range(len(cams))
                ]
                for object_id in scene.object_ids()
            }
        )
    folder = os.path.join(directory, "test_state")
    with open(os.path.join(folder, "transforms.json"), "r", encoding="utf-8") as handle:
        test_transforms = _transforms_from_json(json.load(handle))
    return GroundTruth(
        scenes=scenes,
        images=images,
        masks=masks,
        transforms=transforms,
        cameras=cams,
        test_cameras=test_cams,
        test_scene=load_scene(os.path.join(folder, "scene.gsc")),
        test_images=[read_ppm(os.path.join(folder, f"view_{view}.ppm")) for view in range(len(test_cams))],
        test_transforms=test_transforms,
        seed=rig["seed"],
    )


def _resting(object_id, shape, size, x, y, primitive_count):
    # type: (int, str, float, float, float, int) -> ObjectSpec
    return ObjectSpec(
        object_id,
        shape,
        size,
        primitive_count=primitive_count,
        pose=RigidTransform.from_translation((x, y, size / 2.0 + 0.01)),
    )


def scenario(name, primitive_count=200):
    # type: (str, int) -> Tuple[SceneSpec, CameraRigSpec, StateScript]
    """Named harness scenarios: ``move``, ``occlusion``, ``add_remove`` and ``long``."""
    rig = CameraRigSpec()
    if name == "move":
        objects = [
            _resting(0, "sphere", 0.3, -0.3, -0.2, primitive_count),
            _resting(1, "box", 0.25, 0.35, 0.3, primitive_count),
        ]
        steps = [
            [Action.move(0, yaw_about(objects[0].pose.translation, np.pi / 6.0, (0.35, 0.2, 0.0)))],
            [Action.move(1, yaw_about(objects[1].pose.translation, -np.pi / 8.0, (0.1, 0.2, 0.0)))],
        ]
    elif name == "occlusion":
        objects = [
            _resting(0, "box", 0.2, 0.3, 0.0, primitive_count),
            _resting(1, "box", 0.4, 0.0, 0.0, primitive_count),
        ]
        steps = [
            [Action.move(0, yaw_about(objects[0].pose.translation, np.pi / 4.0, (-0.55, 0.05, 0.0)))],
            [Action.move(0, RigidTransform.from_translation((0.0, -0.4, 0.0)))],
        ]
    elif name == "add_remove":
        objects = [
            _resting(0, "sphere", 0.3, -0.35, 0.0, primitive_count),
            _resting(1, "box", 0.25, 0.35, -0.3, primitive_count),
        ]
        steps = [
            [Action.add(_resting(2, "sphere", 0.25, 0.3, 0.4, primitive_count))],
            [Action.remove(1), Action.move(0, RigidTransform.from_translation((0.1, -0.3, 0.0)))],
        ]
    elif name == "long":
        objects = [
            _resting(0, "sphere", 0.25, -0.4, -0.3, primitive_count),
            _resting(1, "box", 0.25, 0.4, -0.3, primitive_count),
            _resting(2, "sphere", 0.2, 0.0, 0.4, primitive_count),
        ]
        steps = [
            [Action.move(0, RigidTransform.from_translation((0.2, 0.1, 0.0)))],
            [Action.move(1, yaw_about(objects[1].pose.translation, np.pi / 5.0, (-0.1, 0.2, 0.0)))],
            [Action.move(2, RigidTransform.from_translation((-0.2, -0.1, 0.0)))],
            [
                Action.move(0, RigidTransform.from_translation((0.0, 0.25, 0.0))),
                Action.move(2, RigidTransform.from_translation((0.3, 0.0, 0.0))),
            ],
            [Action.move(1, RigidTransform.from_translation((-0.15, 0.0, 0.0)))],
        ]
    else:
        raise ConfigError(f"Unknown scenario {name!r}.")
    return SceneSpec(objects=objects), rig, StateScript(tuple(tuple(step) for step in steps))


def load_generation_spec(data):
    # type: (Dict[str, Any]) -> Tuple[SceneSpec, CameraRigSpec, StateScript]
    """Spec JSON: either ``{"scenario": name}`` or explicit ``scene``/``rig``/``script``."""
    if "scenario" in data:
        unknown = sorted(set(data) - {"scenario", "primitive_count"})
        if unknown:
            raise ConfigError(f"Unknown generation keys: {', '.join(unknown)}.")
        return scenario(data["scenario"], data.get("primitive_count", 200))
    unknown = sorted(set(data) - {"scene", "rig", "script"})
    if unknown:
        raise ConfigError(f"Unknown generation keys: {', '.join(unknown)}.")
    return (
        SceneSpec.from_dict(data.get("scene", {})),
        CameraRigSpec.from_dict(data.get("rig", {})),
        script_from_list(data.get("script", [])),
    )
