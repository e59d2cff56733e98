"""Coarse-to-fine rigid alignment of one object.

ICP on primitive centers gives the coarse pose; a line-searched descent on a
left twist perturbation then minimizes a masked photometric term plus a
one-directional chamfer term.
"""

from collections import namedtuple
from typing import Any, Dict, List, Optional, Sequence, Tuple  # pylint: disable=unused-import

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .exceptions import ConfigError, DegenerateGeometry, NoVisiblePixels
from .geom import Camera, RigidTransform, compose, se3_exp, transform_point
from .render import DEFAULT_BACKGROUND, RenderPass, photometric_loss, twist_gradient
from .scene import GaussianScene, ObjectSubset, apply_transform
from .utils import as_points

COLLINEAR_RATIO = 1e-9
COVERAGE_THRESHOLD = 0.1


class _ConfigMixin(object):
    """Dict round-trip for namedtuple configs; unknown keys are rejected."""

    __slots__ = ()

    @classmethod
    def from_dict(cls, data):
        # type: (Dict[str, Any]) -> Any
        unknown = sorted(set(data) - set(cls._fields))
        if unknown:
            raise ConfigError(f"Unknown {cls.__name__} keys: {', '.join(unknown)}.")
        return cls(**data)  # type: ignore

    def to_dict(self):
        # type: () -> Dict[str, Any]
        return dict(self._asdict())  # type: ignore


class ICPConfig(_ConfigMixin, namedtuple("ICPConfig", ["max_iterations", "convergence_tol", "max_correspondence_dist"])):
    """ICP stopping rules; distances in meters."""

    __slots__ = ()

    def __new__(cls, max_iterations=50, convergence_tol=1e-6, max_correspondence_dist=0.3):
        # type: (int, float, float) -> ICPConfig
        if max_iterations <= 0 or convergence_tol <= 0 or max_correspondence_dist <= 0:
            raise ConfigError("ICPConfig values must be positive.")
        return super(ICPConfig, cls).__new__(
            cls, int(max_iterations), float(convergence_tol), float(max_correspondence_dist)
        )


class RefineConfig(
    _ConfigMixin,
    namedtuple("RefineConfig", ["iterations", "step_size", "min_step", "w_p", "w_g", "mask_dilation"]),
):
    """Pose refinement schedule and loss weights."""

    __slots__ = ()

    def __new__(cls, iterations=1000, step_size=1e-3, min_step=1e-7, w_p=1.0, w_g=0.1, mask_dilation=5):
        # type: (int, float, float, float, float, int) -> RefineConfig
        if iterations < 0 or step_size <= 0 or min_step <= 0 or mask_dilation < 0:
            raise ConfigError("RefineConfig iterations, steps and dilation must be positive.")
        if w_p < 0 or w_g < 0:
            raise ConfigError("RefineConfig weights must be non-negative.")
        return super(RefineConfig, cls).__new__(
            cls, int(iterations), float(step_size), float(min_step), float(w_p), float(w_g), int(mask_dilation)
        )


class AlignmentResult(
    namedtuple("AlignmentResult", ["t_coarse", "t_fine", "final_loss", "iterations_used", "initial_loss"])
):
    __slots__ = ()

    def to_dict(self):
        # type: () -> Dict[str, Any]
        return {
            "t_coarse": self.t_coarse.to_list(),
            "t_fine": self.t_fine.to_list(),
            "final_loss": self.final_loss,
            "initial_loss": self.initial_loss,
            "iterations_used": self.iterations_used,
        }


def _check_spread(points, name):
    # type: (np.ndarray, str) -> None
    if len(points) < 3:
        raise DegenerateGeometry(f"{name} has {len(points)} points, at least 3 are needed.")
    singular = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if singular[1] <= COLLINEAR_RATIO * max(singular[0], 1e-300):
        raise DegenerateGeometry(f"{name} points are collinear.")


def best_fit_transform(src, dst):
    # type: (Any, Any) -> RigidTransform
    """Least-squares rigid transform mapping ``src`` rows onto ``dst`` rows (Kabsch).

    :raises DegenerateGeometry: fewer than 3 pairs or collinear points
    """
    src, dst = as_points(src), as_points(dst)
    if src.shape != dst.shape:
        raise ValueError(f"Point sets differ: {src.shape} vs {dst.shape}.")
    _check_spread(src, "source")
    src_mean, dst_mean = src.mean(axis=0), dst.mean(axis=0)
    h = (src - src_mean).T @ (dst - dst_mean)
    u, _, vt = np.linalg.svd(h)
    correction = np.diag([1.0, 1.0, np.sign(np.linalg.det(vt.T @ u.T)) or 1.0])
    rotation = vt.T @ correction @ u.T
    return RigidTransform(rotation, dst_mean - rotation @ src_mean)


def icp(src, dst, init=None, cfg=None):
    # type: (Any, Any, Optional[RigidTransform], Optional[ICPConfig]) -> RigidTransform
    """Point-to-point ICP.

    :param src: ``(N, 3)`` points to move
    :param dst: ``(M, 3)`` reference points
    :param init: starting transform, identity by default
    :return: transform mapping ``src`` toward ``dst``
    :raises DegenerateGeometry: too few or collinear correspondences
    """
    src, dst = as_points(src), as_points(dst)
    cfg = cfg or ICPConfig()
    _check_spread(src, "source")
    _check_spread(dst, "target")
    transform = init or RigidTransform.identity()
    tree = cKDTree(dst)
    previous = None  # type: Optional[float]
    for _ in range(cfg.max_iterations):
        moved = transform_point(transform, src)
        distances, nearest = tree.query(moved, distance_upper_bound=cfg.max_correspondence_dist)
        matched = np.isfinite(distances)
        if matched.sum() < 3:
            raise DegenerateGeometry(
                f"Only {int(matched.sum())} correspondences within "
                f"{cfg.max_correspondence_dist} m."
            )
        step = best_fit_transform(moved[matched], dst[nearest[matched]])
        transform = compose(step, transform)
        error = float(distances[matched].mean())
        if previous is not None and abs(previous - error) < cfg.convergence_tol:
            break
        previous = error
    return transform


def chamfer(points, targets, tree=None):
    # type: (np.ndarray, np.ndarray, Optional[cKDTree]) -> Tuple[float, np.ndarray]
    """Mean squared distance from each point to its nearest target, and its gradient."""
    points = as_points(points)
    if not len(points):
        return 0.0, np.zeros((0, 3))
    targets = as_points(targets)
    if tree is None:
        tree = cKDTree(targets)
    _, nearest = tree.query(points)
    offset = points - targets[nearest]
    count = float(len(points))
    return float(np.sum(offset * offset) / count), 2.0 * offset / count


def object_masks(scene, subset, transform, cams, dilation, extra_masks=None, background=DEFAULT_BACKGROUND):
    # type: (GaussianScene, ObjectSubset, RigidTransform, Sequence[Camera], int, Optional[Sequence[np.ndarray]], Any) -> List[np.ndarray]
    """Dilated silhouettes of the posed subset, united with optional extra masks."""
    posed = apply_transform(scene, subset, transform).subset(subset.indices)
    masks = []
    for index, cam in enumerate(cams):
        mask = RenderPass(posed, cam, background).coverage > COVERAGE_THRESHOLD
        if extra_masks is not None:
            mask = mask | np.asarray(extra_masks[index], dtype=bool)
        if dilation and mask.any():
            mask = ndimage.binary_dilation(mask, structure=np.ones((3, 3), dtype=bool), iterations=dilation)
        masks.append(mask)
    return masks


class _AlignmentObjective(object):
    def __init__(self, scene, subset, images, cams, masks, targets, cfg, background):
        # type: (GaussianScene, ObjectSubset, Sequence[np.ndarray], Sequence[Camera], List[np.ndarray], np.ndarray, RefineConfig, Any) -> None
        self.scene = scene
        self.subset = subset
        self.images = images
        self.cams = cams
        self.masks = masks
        self.targets = as_points(targets)
        self.tree = cKDTree(self.targets) if len(self.targets) else None
        self.cfg = cfg
        self.background = background

    def __call__(self, transform, with_grad=True):
        # type: (RigidTransform, bool) -> Tuple[float, np.ndarray]
        posed = apply_transform(self.scene, self.subset, transform)
        points = posed.positions[self.subset.indices]
        loss, grad_positions = photometric_loss(
            posed, self.cams, self.images, self.masks, self.background, with_grad=with_grad
        )
        loss *= self.cfg.w_p
        geometric = self.tree is not None and self.cfg.w_g > 0
        if not with_grad:
            if geometric:
                loss += self.cfg.w_g * chamfer(points, self.targets, self.tree)[0]
            return loss, np.zeros(6)
        grad_points = self.cfg.w_p * grad_positions[self.subset.indices]
        if geometric:
            distance, grad_geometric = chamfer(points, self.targets, self.tree)
            loss += self.cfg.w_g * distance
            grad_points = grad_points + self.cfg.w_g * grad_geometric
        return loss, twist_gradient(points, grad_points)


def refine_pose(
    scene,  # type: GaussianScene
    subset,  # type: ObjectSubset
    t_init,  # type: RigidTransform
    images,  # type: Sequence[np.ndarray]
    cams,  # type: Sequence[Camera]
    geom_targets=None,  # type: Any
    cfg=None,  # type: Optional[RefineConfig]
    masks=None,  # type: Optional[Sequence[np.ndarray]]
    background=DEFAULT_BACKGROUND,  # type: Any
):
    # type: (...) -> AlignmentResult
    """Refine the pose of ``subset`` against observations of the current state.

    The subset is rendered posed by ``T`` together with the unchanged rest of
    ``scene``. The photometric term only looks at the dilated object silhouette
    at ``t_init`` (plus ``masks``), fixed for the whole run. Each iteration takes
    ``dxi = -step * grad``, keeps ``Exp(dxi) T`` when the loss drops and halves
    the step otherwise, stopping once the step falls below ``min_step``.

    :raises NoVisiblePixels: the object covers no pixel in any view
    """
    cfg = cfg or RefineConfig()
    if not len(subset):
        raise ValueError("Cannot refine an empty subset.")
    if not cams:
        raise ValueError("Refinement needs at least one observation view.")
    window = object_masks(scene, subset, t_init, cams, cfg.mask_dilation, masks, background)
    if not any(mask.any() for mask in window):
        raise NoVisiblePixels(f"Object {subset.object_id} projects to no pixel in any view.")
    targets = np.zeros((0, 3)) if geom_targets is None else geom_targets
    objective = _AlignmentObjective(scene, subset, images, cams, window, targets, cfg, background)

    transform = t_init
    loss, grad = objective(transform)
    initial = loss
    step = cfg.step_size
    used = 0
    for used in range(1, cfg.iterations + 1):
        if not np.any(grad):
            break
        candidate = compose(se3_exp(-step * grad), transform)
        candidate_loss, _ = objective(candidate, with_grad=False)
        if candidate_loss < loss:
            transform = candidate
            loss, grad = objective(transform)
        else:
            step *= 0.5
            if step < cfg.min_step:
                break
    return AlignmentResult(
        t_coarse=t_init, t_fine=transform, final_loss=float(loss), iterations_used=used, initial_loss=float(initial)
    )


def align_object(
    scene,  # type: GaussianScene
    subset,  # type: ObjectSubset
    target_points,  # type: Any
    images,  # type: Sequence[np.ndarray]
    cams,  # type: Sequence[Camera]
    icp_cfg=None,  # type: Optional[ICPConfig]
    refine_cfg=None,  # type: Optional[RefineConfig]
    masks=None,  # type: Optional[Sequence[np.ndarray]]
    background=DEFAULT_BACKGROUND,  # type: Any
):
    # type: (...) -> AlignmentResult
    """Centroid initialization, ICP, then photometric refinement."""
    source = scene.positions[subset.indices]
    target_points = as_points(target_points)
    init = RigidTransform.from_translation(target_points.mean(axis=0) - source.mean(axis=0))
    coarse = icp(source, target_points, init, icp_cfg)
    refined = refine_pose(scene, subset, coarse, images, cams, target_points, refine_cfg, masks, background)
    return refined._replace(t_coarse=coarse)
