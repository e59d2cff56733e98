"""Recurrent state fusion.

:class:`FusionPipeline` turns the fused scene of state ``t - 1`` plus the
observations of state ``t`` into the fused scene of state ``t``. Stages run in
this order::

    render_prev -> change -> quick_reconstruct -> regions -> associate
    -> align -> remove -> complete -> visibility -> optimize

Every stage is timed, traced and logged; any failure is re-raised as
:class:`StageError` naming the stage.
"""

import contextlib
import os
import time
from collections import namedtuple
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple  # pylint: disable=unused-import

import numpy as np
import simplejson as json
import structlog

from .assoc import MatchResult, RegionDescriptor, associate, mean_descriptor, region_descriptor
from .change import extract_features, change_mask, refine_object_masks
from .exceptions import (
    ConfigError,
    EmptySelection,
    ImageTooSmall,
    NoViews,
    StageError,
    UnknownObject,
    UnknownStateIndex,
)
from .geom import Camera, RigidTransform, compose_all, inverse, project_points, transform_point
from .losses import photometric_objective, ssim
from .metrics import MetricsRow, mean_finite, psnr
from .optimize import GaussianOptimizer
from .protocols import Ddtrace, FeatureExtractor, Statsd  # pylint: disable=unused-import
from .register import AlignmentResult, ICPConfig, RefineConfig, align_object
from .render import RenderGradients, RenderPass
from .scene import UNLABELED, GaussianScene, ObjectSubset, apply_transform, load_scene, save_scene, segment_by_masks
from .utils import add_stage_tags, make_rng, traced_stage
from .voxel import connected_components, fill_set, primitives_in, visibility, voxelize, voxelize_scene

MIN_OBJECT_PRIMITIVES = 10
LABEL_MAJORITY = 0.5
SILHOUETTE_WEIGHT = 0.5
INIT_OPACITY = 0.1
STATE_FILE = "state.json"
SCENE_FILE = "scene.gsc"

Observations = namedtuple("Observations", ["images", "cams", "prev_proposals", "curr_proposals"])
Observations.__new__.__defaults__ = (None, None)  # type: ignore

StageRecord = namedtuple("StageRecord", ["stage", "duration_s", "details"])

FusionResult = namedtuple(
    "FusionResult",
    [
        "state",
        "loss_report",
        "metrics",
        "source_index",
        "optimized",
        "moved",
        "alignments",
        "match",
        "stages",
    ],
)


class FusionConfig(object):
    """Settings of one fusion step and of the reconstructions it runs.

    :param float lambda_s: SSIM weight inside every photometric loss
    :param float lambda_r: replay weight of the total loss
    :param int iterations: optimization steps after completion
    :param float position_lr: position learning rate per meter of scene extent
    :param str mask_mode: ``"components"`` or ``"proposals"``
    :param bool region_completion: insert fill primitives
    :param bool visibility_guided: optimize only ray-visible moved primitives
    :param views_per_step: views sampled per step, all when ``None``
    :param icp: :class:`ICPConfig` or its dict
    :param refine: :class:`RefineConfig` or its dict; ``refine_iterations`` wins
    """

    FIELDS = (
        "lambda_s",
        "lambda_r",
        "iterations",
        "position_lr",
        "color_lr",
        "opacity_lr",
        "scale_lr",
        "densify_interval",
        "densify_grad_threshold",
        "prune_opacity",
        "rng_seed",
        "mask_mode",
        "tau_change",
        "tau_match",
        "min_region_area",
        "vote_fraction",
        "voxel_size",
        "ray_stride",
        "quick_iterations",
        "refine_iterations",
        "region_completion",
        "visibility_guided",
        "views_per_step",
        "background",
        "fill_min_opacity",
        "percent_dense",
        "seed_count",
        "icp",
        "refine",
    )
    MASK_MODES = ("components", "proposals")

    def __init__(
        self,
        lambda_s=0.2,  # type: float
        lambda_r=0.5,  # type: float
        iterations=2000,  # type: int
        position_lr=1.6e-4,  # type: float
        color_lr=2.5e-3,  # type: float
        opacity_lr=0.05,  # type: float
        scale_lr=5e-3,  # type: float
        densify_interval=100,  # type: int
        densify_grad_threshold=2e-4,  # type: float
        prune_opacity=0.005,  # type: float
        rng_seed=0,  # type: Optional[int]
        mask_mode="components",  # type: str
        tau_change=0.8,  # type: float
        tau_match=0.5,  # type: float
        min_region_area=50,  # type: int
        vote_fraction=0.6,  # type: float
        voxel_size=0.05,  # type: float
        ray_stride=1,  # type: int
        quick_iterations=800,  # type: int
        refine_iterations=1000,  # type: int
        region_completion=True,  # type: bool
        visibility_guided=True,  # type: bool
        views_per_step=None,  # type: Optional[int]
        background=(0.0, 0.0, 0.0),  # type: Sequence[float]
        fill_min_opacity=0.1,  # type: float
        percent_dense=0.01,  # type: float
        seed_count=5000,  # type: int
        icp=None,  # type: Any
        refine=None,  # type: Any
    ):
        # type: (...) -> None
        self.lambda_s = float(lambda_s)
        self.lambda_r = float(lambda_r)
        self.iterations = int(iterations)
        self.position_lr = float(position_lr)
        self.color_lr = float(color_lr)
        self.opacity_lr = float(opacity_lr)
        self.scale_lr = float(scale_lr)
        self.densify_interval = int(densify_interval)
        self.densify_grad_threshold = float(densify_grad_threshold)
        self.prune_opacity = float(prune_opacity)
        self.rng_seed = rng_seed
        self.mask_mode = mask_mode
        self.tau_change = float(tau_change)
        self.tau_match = float(tau_match)
        self.min_region_area = int(min_region_area)
        self.vote_fraction = float(vote_fraction)
        self.voxel_size = float(voxel_size)
        self.ray_stride = int(ray_stride)
        self.quick_iterations = int(quick_iterations)
        self.refine_iterations = int(refine_iterations)
        self.region_completion = bool(region_completion)
        self.visibility_guided = bool(visibility_guided)
        self.views_per_step = views_per_step
        self.background = tuple(float(value) for value in background)
        self.fill_min_opacity = float(fill_min_opacity)
        self.percent_dense = float(percent_dense)
        self.seed_count = int(seed_count)
        if isinstance(icp, dict):
            icp = ICPConfig.from_dict(icp)
        self.icp = icp or ICPConfig()
        if isinstance(refine, dict):
            refine = RefineConfig.from_dict(refine)
        self.refine = (refine or RefineConfig())._replace(iterations=self.refine_iterations)
        self.validate()

    def validate(self):
        # type: () -> None
        if not (0.0 <= self.lambda_s <= 1.0 and 0.0 <= self.lambda_r <= 1.0):
            raise ConfigError("lambda_s and lambda_r must lie in [0, 1].")
        if self.iterations <= 0:
            raise ConfigError(f"iterations must be positive, got {self.iterations}.")
        if self.mask_mode not in self.MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {self.MASK_MODES}, got {self.mask_mode!r}.")
        if self.voxel_size <= 0 or self.ray_stride < 1 or self.densify_interval < 1:
            raise ConfigError("voxel_size, ray_stride and densify_interval must be positive.")
        if not 0.0 < self.vote_fraction <= 1.0:
            raise ConfigError(f"vote_fraction must lie in (0, 1], got {self.vote_fraction}.")
        if not 0.0 < self.tau_match < 1.0:
            raise ConfigError(f"tau_match must lie in (0, 1), got {self.tau_match}.")
        if self.views_per_step is not None and int(self.views_per_step) < 1:
            raise ConfigError("views_per_step must be positive or null.")
        if len(self.background) != 3:
            raise ConfigError("background must hold three channels.")

    def __repr__(self):
        # type: () -> str
        return f"FusionConfig({self.to_dict()})"

    def to_dict(self):
        # type: () -> Dict[str, Any]
        data = {name: getattr(self, name) for name in self.FIELDS}
        data["background"] = list(self.background)
        data["icp"] = self.icp.to_dict()
        refine = self.refine.to_dict()
        del refine["iterations"]
        data["refine"] = refine
        return data

    @classmethod
    def from_dict(cls, data):
        # type: (Dict[str, Any]) -> FusionConfig
        unknown = sorted(set(data) - set(cls.FIELDS))
        if unknown:
            raise ConfigError(f"Unknown FusionConfig keys: {', '.join(unknown)}.")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        # type: (str) -> FusionConfig
        with open(path, "r", encoding="utf-8") as handle:
            try:
                data = json.load(handle)
            except json.JSONDecodeError as error:
                raise ConfigError(f"{path}: {error}", original_exc=error)  # pylint: disable=raise-missing-from
        return cls.from_dict(data)

    def replace(self, **overrides):
        # type: (**Any) -> FusionConfig
        data = self.to_dict()
        data.update(overrides)
        return FusionConfig.from_dict(data)


class RecurrentState(object):
    """Fused scene of the latest state with everything replay needs.

    :param GaussianScene scene: current scene, ``state_index`` is the state
    :param dict cameras: state index -> cameras observed at that state
    :param dict transform_history: object id -> ``[(state, RigidTransform)]``
    :param dict added_at: object id -> state in which the object appeared
    :param grid_origin: voxel lattice origin shared by every state
    """

    def __init__(
        self,
        scene,  # type: GaussianScene
        cameras,  # type: Dict[int, List[Camera]]
        transform_history=None,  # type: Optional[Dict[int, List[Tuple[int, RigidTransform]]]]
        added_at=None,  # type: Optional[Dict[int, int]]
        grid_origin=None,  # type: Any
        voxel_size=0.05,  # type: float
    ):
        # type: (...) -> None
        self.scene = scene
        self.cameras = {int(k): list(v) for k, v in cameras.items()}
        self.transform_history = {
            int(k): list(v) for k, v in (transform_history or {}).items()
        }
        self.added_at = {int(k): int(v) for k, v in (added_at or {}).items()}
        if grid_origin is None:
            grid_origin = scene.bounds()[0]
        self.grid_origin = np.asarray(grid_origin, dtype=np.float64).reshape(3)
        self.voxel_size = float(voxel_size)

    @classmethod
    def initial(cls, scene, cams, voxel_size=0.05):
        # type: (GaussianScene, Sequence[Camera], float) -> RecurrentState
        """State 0 built from a reconstructed scene; its objects exist from state 0."""
        return cls(
            scene,
            {scene.state_index: list(cams)},
            added_at={object_id: scene.state_index for object_id in scene.object_ids()},
            voxel_size=voxel_size,
        )

    @property
    def state_index(self):
        # type: () -> int
        return self.scene.state_index

    @property
    def state_count(self):
        # type: () -> int
        return self.scene.state_index + 1

    def object_ids(self):
        # type: () -> List[int]
        return self.scene.object_ids()

    def membership(self, object_id):
        # type: (int) -> ObjectSubset
        return self.scene.membership(object_id)

    def next_object_id(self):
        # type: () -> int
        known = set(self.scene.object_ids()) | set(self.transform_history) | set(self.added_at)
        return max(known) + 1 if known else 0

    def to_dict(self):
        # type: () -> Dict[str, Any]
        return {
            "state_index": self.state_index,
            "grid_origin": [float(value) for value in self.grid_origin],
            "voxel_size": self.voxel_size,
            "added_at": {str(k): v for k, v in sorted(self.added_at.items())},
            "transform_history": {
                str(k): [[state, transform.to_list()] for state, transform in steps]
                for k, steps in sorted(self.transform_history.items())
            },
            "cameras": {
                str(k): [cam.to_dict() for cam in cams] for k, cams in sorted(self.cameras.items())
            },
        }


def save_recurrent_state(rs, directory):
    # type: (RecurrentState, str) -> None
    """Write ``scene.gsc`` and ``state.json`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    save_scene(rs.scene, os.path.join(directory, SCENE_FILE))
    with open(os.path.join(directory, STATE_FILE), "w", encoding="utf-8") as handle:
        json.dump(rs.to_dict(), handle, indent=2, sort_keys=True)


def load_recurrent_state(directory):
    # type: (str) -> RecurrentState
    scene = load_scene(os.path.join(directory, SCENE_FILE))
    with open(os.path.join(directory, STATE_FILE), "r", encoding="utf-8") as handle:
        data = json.load(handle)
    return RecurrentState(
        scene,
        cameras={
            int(k): [Camera.from_dict(cam) for cam in cams] for k, cams in data["cameras"].items()
        },
        transform_history={
            int(k): [(int(state), RigidTransform.from_list(values)) for state, values in steps]
            for k, steps in data["transform_history"].items()
        },
        added_at={int(k): int(v) for k, v in data["added_at"].items()},
        grid_origin=data["grid_origin"],
        voxel_size=data["voxel_size"],
    )


class LossReport(object):
    """Per-iteration losses of one optimization run."""

    def __init__(self):
        # type: () -> None
        self.l_curr = []  # type: List[float]
        self.l_replay = []  # type: List[float]
        self.total = []  # type: List[float]
        self.replay_index = []  # type: List[int]
        self.replay_grad_norm = []  # type: List[float]

    def __len__(self):
        # type: () -> int
        return len(self.total)

    def record(self, l_curr, l_replay, total, replay_index=-1, replay_grad_norm=0.0):
        # type: (float, float, float, int, float) -> None
        self.l_curr.append(float(l_curr))
        self.l_replay.append(float(l_replay))
        self.total.append(float(total))
        self.replay_index.append(int(replay_index))
        self.replay_grad_norm.append(float(replay_grad_norm))

    def moving_average(self, window=50):
        # type: (int) -> np.ndarray
        values = np.asarray(self.total)
        if len(values) < window:
            return values.copy()
        return np.convolve(values, np.full(window, 1.0 / window), mode="valid")

    def to_dict(self):
        # type: () -> Dict[str, Any]
        return {
            "l_curr": self.l_curr,
            "l_replay": self.l_replay,
            "total": self.total,
            "replay_index": self.replay_index,
            "replay_grad_norm": self.replay_grad_norm,
        }


def _zero_gradients(count):
    # type: (int) -> RenderGradients
    return RenderGradients(np.zeros((count, 3)), np.zeros(count), np.zeros((count, 3)), np.zeros(count), None)


def _add_gradients(total, grads, weight):
    # type: (RenderGradients, RenderGradients, float) -> RenderGradients
    return RenderGradients(
        total.colors + weight * grads.colors,
        total.opacities + weight * grads.opacities,
        total.positions + weight * grads.positions,
        total.scales + weight * grads.scales,
        None,
    )


def _gradient_norm(grads):
    # type: (RenderGradients) -> float
    return float(
        np.sqrt(
            np.sum(grads.colors ** 2)
            + np.sum(grads.opacities ** 2)
            + np.sum(grads.positions ** 2)
            + np.sum(grads.scales ** 2)
        )
    )


def view_objective(scene, cams, images, views, lambda_s, background):
    # type: (GaussianScene, Sequence[Camera], Sequence[np.ndarray], Sequence[int], float, Any) -> Tuple[float, RenderGradients]
    """Mean photometric loss over the selected views and its gradients."""
    loss = 0.0
    grads = _zero_gradients(len(scene))
    weight = 1.0 / len(views)
    for view in views:
        forward = RenderPass(scene, cams[view], background)
        value, pixel_grad = photometric_objective(forward.image, images[view], lambda_s)
        loss += weight * value
        grads = _add_gradients(grads, forward.backward(pixel_grad), weight)
    return loss, grads


def _pose_at(scene, history, added_at, current, index):
    # type: (GaussianScene, Dict[int, List[Tuple[int, RigidTransform]]], Dict[int, int], int, int) -> Tuple[GaussianScene, np.ndarray, List[Tuple[np.ndarray, np.ndarray]]]
    """Scene re-posed at state ``index``.

    :return: posed scene, rows of ``scene`` it keeps, and ``(rows, rotation)``
        pairs needed to carry position gradients back
    """
    if not 0 <= index <= current:
        raise UnknownStateIndex(f"State {index} is outside of 0..{current}.")
    if index == current:
        return scene, np.arange(len(scene)), []
    posed = scene.copy(state_index=index)
    keep = np.ones(len(scene), dtype=bool)
    rotations = []
    for object_id in scene.object_ids():
        rows = scene.instance_ids == object_id
        if added_at.get(object_id, 0) > index:
            keep &= ~rows
            continue
        later = [transform for state, transform in history.get(object_id, []) if state > index]
        if later:
            back = inverse(compose_all(later))
            posed.positions[rows] = transform_point(back, scene.positions[rows])
            rotations.append((rows, back.rotation))
    kept = np.nonzero(keep)[0]
    if len(kept) != len(scene):
        posed = posed.subset(kept)
    return posed, kept, rotations


def replay_scene(rs, index, exclude=()):
    # type: (RecurrentState, int, Sequence[int]) -> GaussianScene
    """Current scene with every object moved back to where it was at state ``index``.

    Objects added after ``index`` and objects in ``exclude`` are left out; the
    state itself is not modified.

    :raises UnknownStateIndex: ``index`` outside ``0..state_index``
    """
    scene = rs.scene
    if len(exclude):
        scene = scene.delete(np.nonzero(np.isin(scene.instance_ids, list(exclude)))[0])
    return _pose_at(scene, rs.transform_history, rs.added_at, rs.state_index, index)[0]


def replay_render(rs, index, background=(0.0, 0.0, 0.0), exclude=()):
    # type: (RecurrentState, int, Any, Sequence[int]) -> List[np.ndarray]
    """Images of :func:`replay_scene` seen by the cameras recorded for ``index``."""
    scene = replay_scene(rs, index, exclude)
    return [RenderPass(scene, cam, background).image for cam in rs.cameras[index]]


def novel_state(rs, object_id, transform):
    # type: (RecurrentState, int, RigidTransform) -> GaussianScene
    """Copy of the scene with one object moved by ``transform``.

    :raises UnknownObject: no primitive carries ``object_id``
    """
    if object_id not in rs.scene.object_ids():
        raise UnknownObject(f"Object {object_id} is not part of the scene.")
    return apply_transform(rs.scene, rs.membership(object_id), transform)


def rig_volume(cams):
    # type: (Sequence[Camera]) -> Tuple[np.ndarray, np.ndarray]
    """Box spanned by the camera centers and the points they look at."""
    centers = np.array([cam.center for cam in cams])
    middle = centers.mean(axis=0)
    points = [centers]
    for cam, center in zip(cams, centers):
        reach = np.linalg.norm(center - middle) or 1.0
        points.append((center + reach * cam.world_to_camera.rotation[2])[None, :])
    stacked = np.concatenate(points)
    return stacked.min(axis=0), stacked.max(axis=0)


def seed_scene(low, high, count, rng, state_index=0):
    # type: (Any, Any, int, np.random.Generator, int) -> GaussianScene
    """Uniform random primitives inside the box ``[low, high]``."""
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    size = np.maximum(high - low, 1e-3)
    scale = 0.5 * float(np.prod(size) / max(count, 1)) ** (1.0 / 3.0)
    return GaussianScene(
        rng.uniform(low, low + size, size=(count, 3)),
        np.full(count, scale),
        rng.uniform(0.0, 1.0, size=(count, 3)),
        np.full(count, INIT_OPACITY),
        state_index=state_index,
    )


def _select_views(count, cfg, rng):
    # type: (int, FusionConfig, np.random.Generator) -> List[int]
    if cfg.views_per_step is None or cfg.views_per_step >= count:
        return list(range(count))
    return sorted(int(v) for v in rng.choice(count, size=int(cfg.views_per_step), replace=False))


def _optimizer_for(scene, trainable, cfg, rng):
    # type: (GaussianScene, Optional[np.ndarray], FusionConfig, np.random.Generator) -> GaussianOptimizer
    return GaussianOptimizer(
        scene,
        trainable,
        position_lr=cfg.position_lr * max(scene.extent(), 1e-6),
        color_lr=cfg.color_lr,
        opacity_lr=cfg.opacity_lr,
        scale_lr=cfg.scale_lr,
        rng=rng,
    )


def reconstruct_state(
    images,  # type: Sequence[np.ndarray]
    cams,  # type: Sequence[Camera]
    init_scene=None,  # type: Optional[GaussianScene]
    iterations=None,  # type: Optional[int]
    cfg=None,  # type: Optional[FusionConfig]
    rng=None,  # type: Optional[np.random.Generator]
    loss_report=None,  # type: Optional[LossReport]
):
    # type: (...) -> GaussianScene
    """Fit every primitive parameter to the views of one state.

    Without ``init_scene`` the fit starts from ``cfg.seed_count`` random
    primitives inside :func:`rig_volume`. Densify and prune run every
    ``cfg.densify_interval`` steps over all primitives.

    :raises NoViews: fewer than two views
    """
    cfg = cfg or FusionConfig()
    if len(cams) < 2:
        raise NoViews(f"Reconstruction needs at least 2 views, got {len(cams)}.")
    if len(images) != len(cams):
        raise ValueError(f"Got {len(images)} images for {len(cams)} cameras.")
    rng = rng if rng is not None else make_rng(cfg.rng_seed)
    iterations = cfg.iterations if iterations is None else int(iterations)
    if init_scene is None:
        low, high = rig_volume(cams)
        init_scene = seed_scene(low, high, cfg.seed_count, rng)
    if iterations <= 0:
        return init_scene.copy()

    extent = max(init_scene.extent(), 1e-6)
    optimizer = _optimizer_for(init_scene, None, cfg, rng)
    for step in range(iterations):
        views = _select_views(len(cams), cfg, rng)
        loss, grads = view_objective(optimizer.scene, cams, images, views, cfg.lambda_s, cfg.background)
        optimizer.step(grads)
        if loss_report is not None:
            loss_report.record(loss, 0.0, loss)
        if (step + 1) % cfg.densify_interval == 0 and step + 1 < iterations:
            optimizer.densify_and_prune(
                np.ones(len(optimizer.scene), dtype=bool),
                cfg.densify_grad_threshold,
                cfg.percent_dense * extent,
                cfg.prune_opacity,
            )
    return optimizer.scene


def _project_votes(scene, masks, cams, depths):
    # type: (GaussianScene, Sequence[Optional[np.ndarray]], Sequence[Camera], Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]
    """Per primitive, views where its center is unoccluded and in bounds, and how many of those fall inside the mask."""
    inside = np.zeros(len(scene), dtype=np.int64)
    seen = np.zeros(len(scene), dtype=np.int64)
    for mask, cam, depth in zip(masks, cams, depths):
        if mask is None:
            continue
        u, v, z, valid = project_points(cam, scene.positions)
        valid &= (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
        rows = np.nonzero(valid)[0]
        columns = np.floor(u[rows]).astype(np.int64)
        lines = np.floor(v[rows]).astype(np.int64)
        surface = depth[lines, columns]
        front = z[rows] <= surface + 3.0 * scene.scales[rows]
        rows, columns, lines = rows[front], columns[front], lines[front]
        seen[rows] += 1
        inside[rows] += mask[lines, columns]
    return inside, seen


def lift_masks(scene, masks, cams, depths, vote_fraction):
    # type: (GaussianScene, Sequence[Optional[np.ndarray]], Sequence[Camera], Sequence[np.ndarray], float) -> np.ndarray
    """Rows whose unoccluded projections land in ``masks`` often enough.

    Views whose mask is ``None`` do not vote.
    """
    inside, seen = _project_votes(scene, masks, cams, depths)
    return np.nonzero((seen > 0) & (inside >= vote_fraction * seen) & (inside > 0))[0]


def _label_masks(forward, members, count):
    # type: (RenderPass, Sequence[np.ndarray], int) -> List[np.ndarray]
    dense = np.full(count, -1)
    for label, rows in enumerate(members):
        dense[rows] = label
    weights = forward.label_weights(dense, len(members))
    return [weights[..., label] > SILHOUETTE_WEIGHT for label in range(len(members))]


_Regions = namedtuple(
    "_Regions",
    ["prev_objects", "curr_objects", "prev_descriptors", "curr_descriptors", "curr_masks", "labels"],
)


class FusionPipeline(object):
    """State-transition operator with logging, metrics and tracing.

    :param FusionConfig config: (optional) defaults for every fusion step
    :param FeatureExtractor extractor: (optional) change descriptor, patch
        statistics by default
    :param Statsd statsd: (optional) Datadog module to send stage metrics
    :param Ddtrace ddtrace: (optional) DataDog tracer provider
    :param str ddtrace_service_name: (optional) Service name of the spans
    :param logger: (optional) Logger with level methods, ``structlog.get_logger()``
        when none is set
    :param str log_prefix: (optional) Prefix of every event. Defaults to ``scenefusion``.
    :param Tuple[str] allowed_log_levels: (optional) Log levels supported by ``logger``
    :param str category: (optional) Category of stage events. Defaults to ``fusion``.
    """

    def __init__(
        self,
        config=None,  # type: Optional[FusionConfig]
        extractor=None,  # type: Optional[FeatureExtractor]
        statsd=None,  # type: Optional[Statsd]
        ddtrace=None,  # type: Optional[Ddtrace]
        ddtrace_service_name="scene_fusion",  # type: str
        logger=None,  # type: Any
        log_prefix="scenefusion",  # type: str
        allowed_log_levels=(
            "debug",
            "info",
            "warning",
            "error",
            "critical",
            "exception",
            "log",
        ),  # type: Tuple
        category="fusion",  # type: str
    ):
        # type: (...) -> None
        self.config = config or FusionConfig()
        self.extractor = extractor
        self.statsd = statsd
        self.ddtrace = ddtrace
        self.ddtrace_service_name = ddtrace_service_name
        self.logger = logger if logger is not None else structlog.get_logger()
        self.log_prefix = log_prefix
        self.allowed_log_levels = allowed_log_levels
        self.category = category

    def log(self, level, event, **kwargs):
        # type: (str, str, **Any) -> None
        r"""Proxy to log with provided logger.

        :param level: string describing log level
        :param event: event (<category> or <category>.<stage>)
        :param \*\*kwargs: kw arguments to be logged
        """
        if not level in self.allowed_log_levels:
            raise AttributeError("Provided log level is not allowed.")
        event_name = f"{self.log_prefix}.{event}"
        if self.logger is not None:
            getattr(self.logger, level)(event_name, **kwargs)

    def metric_increment(self, metric, tags):
        # type: (str, List[str]) -> None
        if self.statsd is not None:
            self.statsd.increment(f"{self.category}.{metric}", tags=list(tags))

    @contextlib.contextmanager
    def _timed(self, stage, tags):
        # type: (str, List[str]) -> Iterator[None]
        if self.statsd is None:
            yield
            return
        with self.statsd.timed(f"{self.category}.{stage}.duration", use_ms=True, tags=tags):
            yield

    def run_stage(self, stage, func, records, tags=None, summary=None):
        # type: (str, Callable[[], Any], List[StageRecord], Optional[List[str]], Optional[Callable[[Any], Dict[str, Any]]]) -> Any
        """Run one stage, record its duration and wrap its failure.

        :raises StageError: ``func`` raised, tagged with ``stage``
        """
        stage_tags = list(tags or []) + [f"stage:{stage}"]
        started = time.perf_counter()
        try:
            with self._timed(stage, stage_tags):
                with traced_stage(
                    "fusion.stage", stage, self.ddtrace, self.ddtrace_service_name, {"stage": stage}
                ):
                    result = func()
        except Exception as error:  # pylint: disable=broad-except
            extra = {"description": str(error), "error_type": type(error).__name__}
            add_stage_tags(extra, stage_tags)
            self.log(
                "exception",
                f"{self.category}.{stage}.failed",
                duration_s=time.perf_counter() - started,
                **extra,
            )
            self.metric_increment("stage", stage_tags + ["status:error"])
            if isinstance(error, StageError):
                raise
            raise StageError(str(error), stage=stage, original_exc=error)  # pylint: disable=raise-missing-from

        duration = time.perf_counter() - started
        details = summary(result) if summary is not None else {}
        records.append(StageRecord(stage, duration, details))
        fields = dict(details)
        add_stage_tags(fields, stage_tags)
        self.log("info", f"{self.category}.{stage}", duration_s=duration, **fields)
        self.metric_increment("stage", stage_tags + ["status:success"])
        return result

    def fuse_state(self, rs, observations, cfg=None):
        # type: (RecurrentState, Observations, Optional[FusionConfig]) -> Tuple[RecurrentState, LossReport, MetricsRow]
        """Fuse the observations of state ``t`` into the state of ``t - 1``."""
        result = self.fuse(rs, observations, cfg)
        return result.state, result.loss_report, result.metrics

    def fuse(self, rs, observations, cfg=None):
        # type: (RecurrentState, Observations, Optional[FusionConfig]) -> FusionResult
        """Like :meth:`fuse_state`, returning the full :class:`FusionResult` trace."""
        cfg = cfg or self.config
        images = [np.asarray(image, dtype=np.float64) for image in observations.images]
        cams = list(observations.cams)
        if not cams or len(images) != len(cams):
            raise NoViews(f"Got {len(images)} images for {len(cams)} cameras.")
        index = rs.state_index + 1
        rng = make_rng(None if cfg.rng_seed is None else int(cfg.rng_seed) + index)
        background = cfg.background
        prev = rs.scene
        records = []  # type: List[StageRecord]
        tags = [f"state:{index}"]
        started = time.perf_counter()

        renders = self.run_stage(
            "render_prev",
            lambda: [RenderPass(prev, cam, background) for cam in cams],
            records,
            tags,
            lambda value: {"views": len(value)},
        )
        changes = self.run_stage(
            "change",
            lambda: [
                change_mask(
                    extract_features(forward.image, self.extractor),
                    extract_features(image, self.extractor),
                    cfg.tau_change,
                )
                for forward, image in zip(renders, images)
            ],
            records,
            tags,
            lambda value: {"changed_pixels": int(sum(mask.sum() for mask in value))},
        )
        if not any(mask.any() for mask in changes):
            return self._unchanged(rs, index, cams, images, renders, records, started)

        quick = self.run_stage(
            "quick_reconstruct",
            lambda: self._quick_reconstruct(prev, images, cams, changes, cfg, rng),
            records,
            tags,
            lambda value: {"primitives": len(value)},
        )
        regions = self.run_stage(
            "regions",
            lambda: self._regions(rs, renders, quick, images, cams, changes, observations, cfg),
            records,
            tags,
            lambda value: {"prev_objects": len(value.prev_objects), "curr_objects": len(value.curr_objects)},
        )
        match = self.run_stage(
            "associate",
            lambda: associate(regions.prev_descriptors, regions.curr_descriptors, cfg.tau_match),
            records,
            tags,
            lambda value: {"moved": len(value.moved), "removed": len(value.removed), "added": len(value.added)},
        )

        working = prev.copy(state_index=index)
        working.instance_ids = regions.labels.copy()
        history = {k: list(v) for k, v in rs.transform_history.items()}
        added_at = dict(rs.added_at)
        alignments = {}  # type: Dict[int, AlignmentResult]
        moved = np.zeros(len(working), dtype=bool)

        def align():
            # type: () -> GaussianScene
            scene = working
            for prev_id, curr_key in match.moved:
                subset = scene.membership(prev_id)
                targets = quick.positions[regions.curr_objects[curr_key]]
                result = align_object(
                    scene, subset, targets, images, cams, cfg.icp, cfg.refine,
                    regions.curr_masks[curr_key], background,
                )
                alignments[prev_id] = result
                scene = apply_transform(scene, subset, result.t_fine)
                history.setdefault(prev_id, []).append((index, result.t_fine))
                moved[subset.indices] = True
            return scene

        working = self.run_stage("align", align, records, tags, lambda value: {"objects": len(alignments)})

        def remove():
            # type: () -> Tuple[GaussianScene, np.ndarray]
            rows = np.nonzero(np.isin(working.instance_ids, list(match.removed)))[0]
            keep = np.ones(len(working), dtype=bool)
            keep[rows] = False
            return working.delete(rows), np.nonzero(keep)[0]

        working, source = self.run_stage(
            "remove", remove, records, tags, lambda value: {"deleted": len(prev) - len(value[1])}
        )
        moved = moved[source]
        peak_primitives = max(len(prev), len(quick))
        peak_voxels = 0

        fill_start = len(working)
        if cfg.region_completion:
            fill_scene, voxels = self.run_stage(
                "complete",
                lambda: self._complete(rs, prev, working, quick, regions, match, changes, cams, cfg, added_at, index),
                records,
                tags,
                lambda value: {"fill": len(value[0]), "voxels": value[1]},
            )
            peak_voxels = max(peak_voxels, voxels)
            working = working.concat(fill_scene)
            source = np.concatenate([source, np.full(len(fill_scene), -1)])
        peak_primitives = max(peak_primitives, len(working))

        def visible_rows():
            # type: () -> Tuple[np.ndarray, int]
            rows = np.nonzero(moved)[0]
            if not len(rows):
                return rows, 0
            if not cfg.visibility_guided:
                return rows, 0
            grid = voxelize(working.positions[rows], cfg.voxel_size, rs.grid_origin, rows)
            mask = visibility(grid, cams, cfg.ray_stride)
            return np.asarray(primitives_in(grid, mask.visible), dtype=np.int64), len(grid)

        visible, grid_size = self.run_stage(
            "visibility", visible_rows, records, tags, lambda value: {"visible": len(value[0])}
        )
        peak_voxels = max(peak_voxels, grid_size)

        trainable = np.zeros(len(working), dtype=bool)
        trainable[visible] = True
        trainable[fill_start:] = True
        history_before = rs.transform_history
        added_before = rs.added_at
        removed_ids = list(match.removed)
        report = LossReport()

        def optimize():
            # type: () -> GaussianOptimizer
            return self._optimize(
                rs, prev, working, trainable, fill_start, images, cams, history, added_at,
                history_before, added_before, removed_ids, index, cfg, rng, report,
            )

        optimizer = self.run_stage(
            "optimize",
            optimize,
            records,
            tags,
            lambda value: {
                "trainable": int(trainable.sum()),
                "final_loss": report.total[-1] if len(report) else 0.0,
            },
        )
        scene = optimizer.scene
        scene.state_index = index
        peak_primitives = max(peak_primitives, len(scene))
        origin = optimizer.source_index
        source_index = np.where(origin >= 0, source[np.maximum(origin, 0)], -1)
        moved_final = np.where(origin >= 0, moved[np.maximum(origin, 0)], False)

        cameras = dict(rs.cameras)
        cameras[index] = cams
        state = RecurrentState(scene, cameras, history, added_at, rs.grid_origin, rs.voxel_size)
        metrics = self._metrics(
            scene, cams, images, index, records, started, peak_primitives, peak_voxels, background
        )
        self.log(
            "info",
            f"{self.category}.state",
            state=index,
            primitives=len(scene),
            psnr=metrics.psnr,
            wall_time_s=metrics.wall_time_s,
        )
        return FusionResult(
            state=state,
            loss_report=report,
            metrics=metrics,
            source_index=source_index,
            optimized=optimizer.trainable.copy(),
            moved=moved_final,
            alignments=alignments,
            match=match,
            stages=records,
        )

    def _unchanged(self, rs, index, cams, images, renders, records, started):
        # type: (RecurrentState, int, List[Camera], List[np.ndarray], List[RenderPass], List[StageRecord], float) -> FusionResult
        scene = rs.scene.copy(state_index=index)
        cameras = dict(rs.cameras)
        cameras[index] = cams
        state = RecurrentState(
            scene, cameras, rs.transform_history, rs.added_at, rs.grid_origin, rs.voxel_size
        )
        self.log("info", f"{self.category}.unchanged", state=index)
        metrics = self._metrics(
            scene, cams, images, index, records, started, len(scene), 0, None, renders
        )
        return FusionResult(
            state=state,
            loss_report=LossReport(),
            metrics=metrics,
            source_index=np.arange(len(scene)),
            optimized=np.zeros(len(scene), dtype=bool),
            moved=np.zeros(len(scene), dtype=bool),
            alignments={},
            match=MatchResult([], [], []),
            stages=records,
        )

    @staticmethod
    def _metrics(scene, cams, images, index, records, started, peak_primitives, peak_voxels, background, renders=None):
        # type: (GaussianScene, List[Camera], List[np.ndarray], int, List[StageRecord], float, int, int, Any, Optional[List[RenderPass]]) -> MetricsRow
        if renders is None:
            renders = [RenderPass(scene, cam, background) for cam in cams]
        values = [psnr(forward.image, image) for forward, image in zip(renders, images)]
        try:
            structural = float(np.mean([ssim(forward.image, image) for forward, image in zip(renders, images)]))
        except ImageTooSmall:
            structural = float("nan")
        return MetricsRow(
            state_count=index + 1,
            psnr=mean_finite(values),
            ssim=structural,
            wall_time_s=time.perf_counter() - started,
            peak_primitives=int(peak_primitives),
            peak_voxels=int(peak_voxels),
            stage_seconds={record.stage: record.duration_s for record in records},
        )

    @staticmethod
    def _quick_reconstruct(prev, images, cams, changes, cfg, rng):
        # type: (GaussianScene, List[np.ndarray], List[Camera], List[np.ndarray], FusionConfig, np.random.Generator) -> GaussianScene
        """Reconstruct the current state starting from the unchanged part of ``prev``.

        Primitives voting into the change masks are dropped and random seeds
        projecting into a change mask take their place.
        """
        try:
            changed = segment_by_masks(prev, changes, cams, cfg.vote_fraction).indices
        except EmptySelection:
            changed = np.zeros(0, dtype=np.int64)
        static = prev.delete(changed)
        static.instance_ids[:] = UNLABELED
        low, high = prev.bounds() if len(prev) else rig_volume(cams)
        seeds = seed_scene(low, high, cfg.seed_count, rng, prev.state_index)
        hits = np.zeros(len(seeds), dtype=bool)
        for mask, cam in zip(changes, cams):
            u, v, _, valid = project_points(cam, seeds.positions)
            valid &= (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
            rows = np.nonzero(valid)[0]
            hits[rows] |= mask[np.floor(v[rows]).astype(np.int64), np.floor(u[rows]).astype(np.int64)]
        init = static.concat(seeds.subset(np.nonzero(hits)[0]))
        return reconstruct_state(images, cams, init, cfg.quick_iterations, cfg, rng)

    def _regions(self, rs, renders, quick, images, cams, changes, observations, cfg):
        # type: (RecurrentState, List[RenderPass], GaussianScene, List[np.ndarray], List[Camera], List[np.ndarray], Observations, FusionConfig) -> _Regions
        prev = rs.scene
        quick_passes = [RenderPass(quick, cam, cfg.background) for cam in cams]
        prev_depths = [forward.depth_buffer for forward in renders]
        quick_depths = [forward.depth_buffer for forward in quick_passes]
        labels = prev.instance_ids.copy()

        if cfg.mask_mode == "proposals":
            if observations.prev_proposals is None or observations.curr_proposals is None:
                raise ConfigError("mask_mode 'proposals' needs proposals for both states.")
            prev_groups = self._proposal_groups(changes, observations.prev_proposals, cfg)
            curr_groups = self._proposal_groups(changes, observations.curr_proposals, cfg)
        else:
            nearer = [p < q for p, q in zip(prev_depths, quick_depths)]
            prev_groups = {0: self._component_union([c & n for c, n in zip(changes, nearer)], cfg)}
            curr_groups = {0: self._component_union([c & ~n for c, n in zip(changes, nearer)], cfg)}

        prev_objects = {}  # type: Dict[int, np.ndarray]
        next_id = rs.next_object_id()
        for masks in prev_groups.values():
            rows = lift_masks(prev, masks, cams, prev_depths, cfg.vote_fraction)
            for object_id in sorted(set(labels[rows].tolist()) - {UNLABELED}):
                members = np.nonzero(labels == object_id)[0]
                if np.isin(members, rows).mean() >= LABEL_MAJORITY:
                    prev_objects[object_id] = members
            loose = rows[labels[rows] == UNLABELED]
            for component in self._split(prev, loose, rs.grid_origin, cfg.voxel_size):
                labels[component] = next_id
                prev_objects[next_id] = component
                next_id += 1

        curr_objects = {}  # type: Dict[int, np.ndarray]
        for key, masks in sorted(curr_groups.items()):
            rows = lift_masks(quick, masks, cams, quick_depths, cfg.vote_fraction)
            components = self._split(quick, rows, rs.grid_origin, cfg.voxel_size)
            if cfg.mask_mode == "proposals":
                components = [np.concatenate(components)] if components else []
            for component in components:
                curr_objects[key if cfg.mask_mode == "proposals" else len(curr_objects)] = np.sort(component)

        prev_ids = sorted(prev_objects)
        prev_views = [_label_masks(forward, [prev_objects[k] for k in prev_ids], len(prev)) for forward in renders]
        prev_descriptors = self._descriptors(prev_ids, prev_views, [forward.image for forward in renders])
        curr_keys = sorted(curr_objects)
        curr_views = [_label_masks(forward, [curr_objects[k] for k in curr_keys], len(quick)) for forward in quick_passes]
        curr_descriptors = self._descriptors(curr_keys, curr_views, images)
        curr_masks = {
            key: [views[position] for views in curr_views] for position, key in enumerate(curr_keys)
        }
        return _Regions(prev_objects, curr_objects, prev_descriptors, curr_descriptors, curr_masks, labels)

    @staticmethod
    def _component_union(parts, cfg):
        # type: (List[np.ndarray], FusionConfig) -> List[Optional[np.ndarray]]
        masks = []  # type: List[Optional[np.ndarray]]
        for part in parts:
            regions = refine_object_masks(part, None, cfg.min_region_area)
            if not regions:
                masks.append(None)
                continue
            union = np.zeros_like(part)
            for region in regions:
                union |= region.mask
            masks.append(union)
        return masks

    @staticmethod
    def _proposal_groups(changes, proposals, cfg):
        # type: (List[np.ndarray], Sequence[Any], FusionConfig) -> Dict[int, List[Optional[np.ndarray]]]
        groups = {}  # type: Dict[int, List[Optional[np.ndarray]]]
        for view, (change, view_proposals) in enumerate(zip(changes, proposals)):
            for region in refine_object_masks(change, view_proposals, cfg.min_region_area):
                masks = groups.setdefault(region.region_id, [None] * len(changes))
                masks[view] = region.mask
        return groups

    @staticmethod
    def _split(scene, rows, origin, voxel_size):
        # type: (GaussianScene, np.ndarray, np.ndarray, float) -> List[np.ndarray]
        if not len(rows):
            return []
        grid = voxelize(scene.positions[rows], voxel_size, origin, rows)
        components = []
        for voxels in connected_components(grid):
            members = np.asarray(primitives_in(grid, voxels), dtype=np.int64)
            if len(members) >= MIN_OBJECT_PRIMITIVES:
                components.append(members)
        return components

    @staticmethod
    def _descriptors(keys, views, images):
        # type: (List[int], List[List[np.ndarray]], Sequence[np.ndarray]) -> List[RegionDescriptor]
        descriptors = []
        for position, key in enumerate(keys):
            per_view = [
                region_descriptor(image, masks[position], key)
                for masks, image in zip(views, images)
                if masks[position].any()
            ]
            if per_view:
                descriptors.append(mean_descriptor(per_view, key))
        return descriptors

    @staticmethod
    def _complete(rs, prev, working, quick, regions, match, changes, cams, cfg, added_at, index):
        # type: (RecurrentState, GaussianScene, GaussianScene, GaussianScene, _Regions, MatchResult, List[np.ndarray], List[Camera], FusionConfig, Dict[int, int], int) -> Tuple[GaussianScene, int]
        """Quick-reconstruction primitives filling voxels the recurrent scene leaves empty."""
        origin = rs.grid_origin
        v_current = voxelize_scene(quick, cfg.voxel_size, origin)
        v_recurrent = voxelize_scene(working, cfg.voxel_size, origin)
        object_rows = np.concatenate([np.zeros(0, dtype=np.int64)] + list(regions.prev_objects.values()))
        v_objects = voxelize_scene(prev, cfg.voxel_size, origin, ObjectSubset(-1, object_rows))
        voxels = fill_set(v_current, v_objects, v_recurrent)
        rows = np.asarray(primitives_in(v_current, voxels), dtype=np.int64)
        try:
            evidence = segment_by_masks(quick, changes, cams, cfg.vote_fraction).indices
        except EmptySelection:
            evidence = np.zeros(0, dtype=np.int64)
        rows = np.intersect1d(rows, evidence)
        rows = rows[quick.opacities[rows] >= cfg.fill_min_opacity]
        fill = quick.subset(rows)
        fill.instance_ids[:] = UNLABELED
        next_id = max([rs.next_object_id()] + [int(k) + 1 for k in regions.prev_objects])
        for key in match.added:
            hits = np.isin(rows, regions.curr_objects[key])
            if hits.any():
                fill.instance_ids[hits] = next_id
                added_at[next_id] = index
                next_id += 1
        fill.state_index = working.state_index
        return fill, max(len(v_current), len(v_recurrent))

    def _optimize(
        self,
        rs,  # type: RecurrentState
        prev,  # type: GaussianScene
        working,  # type: GaussianScene
        trainable,  # type: np.ndarray
        fill_start,  # type: int
        images,  # type: List[np.ndarray]
        cams,  # type: List[Camera]
        history,  # type: Dict[int, List[Tuple[int, RigidTransform]]]
        added_at,  # type: Dict[int, int]
        history_before,  # type: Dict[int, List[Tuple[int, RigidTransform]]]
        added_before,  # type: Dict[int, int]
        removed_ids,  # type: List[int]
        index,  # type: int
        cfg,  # type: FusionConfig
        rng,  # type: np.random.Generator
        report,  # type: LossReport
    ):
        # type: (...) -> GaussianOptimizer
        """Replay-supervised optimization of the trainable rows.

        Replay targets come from the frozen scene of ``index - 1`` re-posed at
        a random past state, without the objects removed at ``index``.
        """
        optimizer = _optimizer_for(working, trainable, cfg, rng)
        extent = max(working.extent(), 1e-6)
        frozen = prev
        if removed_ids:
            frozen = prev.delete(np.nonzero(np.isin(prev.instance_ids, removed_ids))[0])
        targets = {}  # type: Dict[int, List[np.ndarray]]

        def replay_targets(past):
            # type: (int) -> List[np.ndarray]
            if past not in targets:
                posed = _pose_at(frozen, history_before, added_before, index - 1, past)[0]
                targets[past] = [RenderPass(posed, cam, cfg.background).image for cam in rs.cameras[past]]
            return targets[past]

        weight = cfg.lambda_r
        for step in range(cfg.iterations):
            scene = optimizer.scene
            views = _select_views(len(cams), cfg, rng)
            l_curr, grads = view_objective(scene, cams, images, views, cfg.lambda_s, cfg.background)
            l_replay, past, replay_norm = 0.0, -1, 0.0
            if weight > 0.0:
                past = int(rng.integers(0, index))
                posed, kept, rotations = _pose_at(scene, history, added_at, index, past)
                past_cams = rs.cameras[past]
                past_views = _select_views(len(past_cams), cfg, rng)
                l_replay, posed_grads = view_objective(
                    posed, past_cams, replay_targets(past), past_views, cfg.lambda_s, cfg.background
                )
                replay = _zero_gradients(len(scene))
                for full, part in zip(replay[:4], posed_grads[:4]):
                    full[kept] = part
                for rows, rotation in rotations:
                    replay.positions[rows] = replay.positions[rows] @ rotation
                replay_norm = weight * _gradient_norm(replay)
                grads = _add_gradients(_zero_gradients(len(scene)), grads, 1.0 - weight)
                grads = _add_gradients(grads, replay, weight)
            total = weight * l_replay + (1.0 - weight) * l_curr
            optimizer.step(grads)
            report.record(l_curr, l_replay, total, past, replay_norm)

            if (step + 1) % cfg.densify_interval == 0 and step + 1 < cfg.iterations:
                if cfg.region_completion:
                    origin = optimizer.source_index
                    candidates = (origin < 0) | (origin >= fill_start)
                else:
                    candidates = optimizer.trainable
                optimizer.densify_and_prune(
                    candidates, cfg.densify_grad_threshold, cfg.percent_dense * extent, cfg.prune_opacity
                )
        return optimizer


def fuse_state(rs, observations, cfg=None):
    # type: (RecurrentState, Observations, Optional[FusionConfig]) -> Tuple[RecurrentState, LossReport, MetricsRow]
    """:meth:`FusionPipeline.fuse_state` with a default pipeline."""
    return FusionPipeline(cfg).fuse_state(rs, observations)
