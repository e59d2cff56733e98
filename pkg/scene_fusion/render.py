"""Differentiable front-to-back splatting of isotropic Gaussians.

Each primitive projects to an isotropic 2D footprint ``sigma' = fx * s / Z``
truncated at three sigmas. Per pixel, fragments are blended in ascending
center depth (ties by primitive index) with effective opacity
``min(0.99, alpha * w)``; fragments below 1/255 are skipped and traversal stops
once transmittance drops under 1e-4. The backward pass differentiates the same
fragment list with the order held fixed.
"""

from collections import namedtuple
from typing import Any, Optional, Sequence, Tuple  # pylint: disable=unused-import

import numpy as np

from .geom import Camera, RigidTransform, Twist, camera_points, se3_exp
from .scene import GaussianScene, ObjectSubset, apply_transform

DEFAULT_BACKGROUND = (0.0, 0.0, 0.0)
ALPHA_CAP = 0.99
ALPHA_SKIP = 1.0 / 255.0
TRANSMITTANCE_STOP = 1e-4
FOOTPRINT_SIGMAS = 3.0
DEPTH_COVERAGE = 0.5
NEAR_PLANE = 1e-3

RenderGradients = namedtuple(
    "RenderGradients", ["colors", "opacities", "positions", "scales", "twist"]
)


class RenderPass(object):
    """One forward splatting pass of ``scene`` seen by ``cam``.

    The pass keeps its fragment list so that :meth:`backward` can be called for
    any number of pixel gradients without re-rasterizing.

    :param GaussianScene scene: scene to render, read only
    :param Camera cam: viewpoint
    :param background: RGB color behind the scene
    """

    def __init__(self, scene, cam, background=DEFAULT_BACKGROUND):
        # type: (GaussianScene, Camera, Any) -> None
        self.scene = scene
        self.cam = cam
        self.background = np.asarray(background, dtype=np.float64).reshape(3)
        self.num_pixels = cam.width * cam.height
        self._project()
        self._rasterize()
        self._composite()

    def _project(self):
        # type: () -> None
        cam = self.cam
        self.local = camera_points(cam, self.scene.positions).reshape(-1, 3)
        depth = self.local[:, 2]
        self.visible = depth > NEAR_PLANE
        self.depth = np.where(self.visible, depth, 1.0)
        self.u = cam.fx * self.local[:, 0] / self.depth + cam.cx
        self.v = cam.fy * self.local[:, 1] / self.depth + cam.cy
        self.sigma = cam.fx * self.scene.scales / self.depth

    def _rasterize(self):
        # type: () -> None
        cam = self.cam
        candidates = np.nonzero(self.visible)[0]
        u, v = self.u[candidates], self.v[candidates]
        radius = FOOTPRINT_SIGMAS * self.sigma[candidates]
        limit_x, limit_y = float(cam.width), float(cam.height)
        x0 = np.ceil(np.clip(u - radius - 0.5, -1.0, limit_x)).astype(np.int64)
        x1 = np.floor(np.clip(u + radius - 0.5, -1.0, limit_x)).astype(np.int64)
        y0 = np.ceil(np.clip(v - radius - 0.5, -1.0, limit_y)).astype(np.int64)
        y1 = np.floor(np.clip(v + radius - 0.5, -1.0, limit_y)).astype(np.int64)
        x0, x1 = np.maximum(x0, 0), np.minimum(x1, cam.width - 1)
        y0, y1 = np.maximum(y0, 0), np.minimum(y1, cam.height - 1)
        nx = np.maximum(x1 - x0 + 1, 0)
        ny = np.maximum(y1 - y0 + 1, 0)
        counts = nx * ny

        total = int(counts.sum())
        prim = np.repeat(candidates, counts)
        offset = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
        width = np.repeat(nx, counts)
        px = np.repeat(x0, counts) + offset % np.maximum(width, 1)
        py = np.repeat(y0, counts) + offset // np.maximum(width, 1)

        dx = px + 0.5 - self.u[prim]
        dy = py + 0.5 - self.v[prim]
        sigma = self.sigma[prim]
        dist2 = dx * dx + dy * dy
        weight = np.exp(-dist2 / (2.0 * sigma * sigma))
        raw = self.scene.opacities[prim] * weight
        alpha = np.minimum(raw, ALPHA_CAP)
        keep = (dist2 <= (FOOTPRINT_SIGMAS * sigma) ** 2) & (alpha >= ALPHA_SKIP)

        prim, px, py = prim[keep], px[keep], py[keep]
        pixel = py * cam.width + px
        rank = np.empty(len(self.scene), dtype=np.int64)
        rank[np.lexsort((np.arange(len(self.scene)), self.depth))] = np.arange(len(self.scene))
        order = np.lexsort((rank[prim], pixel))

        self.prim = prim[order]
        self.pixel = pixel[order]
        self.dx = dx[keep][order]
        self.dy = dy[keep][order]
        self.weight = weight[keep][order]
        self.raw_alpha = raw[keep][order]
        self.alpha = alpha[keep][order]

        self.seg_pixel, self.seg_start, self.seg_len = np.unique(
            self.pixel, return_index=True, return_counts=True
        )
        self._by_length = np.argsort(-self.seg_len, kind="stable")
        self._neg_lengths = -self.seg_len[self._by_length]

    def _slots(self, k):
        # type: (int) -> Tuple[np.ndarray, np.ndarray]
        """Segments holding at least ``k + 1`` fragments, and their k-th fragment."""
        count = int(np.searchsorted(self._neg_lengths, -k, side="left"))
        segments = self._by_length[:count]
        return segments, self.seg_start[segments] + k

    def _composite(self):
        # type: () -> None
        fragments = len(self.prim)
        self.t_before = np.zeros(fragments)
        self.used = np.zeros(fragments, dtype=bool)
        transmittance = np.ones(len(self.seg_pixel))
        first_depth = np.full(len(self.seg_pixel), np.inf)
        longest = int(self.seg_len.max()) if len(self.seg_len) else 0
        for k in range(longest):
            segments, frag = self._slots(k)
            current = transmittance[segments]
            alive = current >= TRANSMITTANCE_STOP
            self.t_before[frag] = current
            self.used[frag] = alive
            after = current * (1.0 - np.where(alive, self.alpha[frag], 0.0))
            hit = alive & (after < DEPTH_COVERAGE) & np.isinf(first_depth[segments])
            first_depth[segments[hit]] = self.depth[self.prim[frag[hit]]]
            transmittance[segments] = after
        self.seg_transmittance = transmittance
        self.weights = np.where(self.used, self.alpha * self.t_before, 0.0)

        final = np.ones(self.num_pixels)
        final[self.seg_pixel] = transmittance
        self.final_transmittance = final
        colors = self.scene.colors[self.prim]
        flat = np.empty((self.num_pixels, 3))
        for channel in range(3):
            flat[:, channel] = np.bincount(
                self.pixel, weights=self.weights * colors[:, channel], minlength=self.num_pixels
            )
        flat += final[:, None] * self.background
        depth = np.full(self.num_pixels, np.inf)
        depth[self.seg_pixel] = first_depth
        shape = (self.cam.height, self.cam.width)
        self.image = flat.reshape(shape + (3,))
        self.depth_buffer = depth.reshape(shape)

    @property
    def coverage(self):
        # type: () -> np.ndarray
        """Accumulated opacity per pixel, ``1 - final transmittance``."""
        return (1.0 - self.final_transmittance).reshape(self.cam.height, self.cam.width)

    def label_weights(self, labels, num_labels):
        # type: (np.ndarray, int) -> np.ndarray
        """Per-pixel blend weight summed by primitive label.

        :param labels: ``(N,)`` integer label per primitive, negatives ignored
        :return: ``(H, W, num_labels)`` array
        """
        labels = np.asarray(labels, dtype=np.int64)[self.prim]
        keep = (labels >= 0) & (labels < num_labels)
        flat = np.bincount(
            self.pixel[keep] * num_labels + labels[keep],
            weights=self.weights[keep],
            minlength=self.num_pixels * num_labels,
        )
        return flat.reshape(self.cam.height, self.cam.width, num_labels)

    def backward(self, grad_image):
        # type: (np.ndarray) -> RenderGradients
        """Gradients of a loss w.r.t. primitive parameters.

        :param grad_image: ``(H, W, 3)`` derivative of the loss w.r.t. the image
        """
        count = len(self.scene)
        cam = self.cam
        grad = np.asarray(grad_image, dtype=np.float64).reshape(self.num_pixels, 3)
        frag_grad = grad[self.pixel]
        colors = self.scene.colors[self.prim]

        grad_colors = np.stack(
            [
                np.bincount(self.prim, weights=self.weights * frag_grad[:, c], minlength=count)
                for c in range(3)
            ],
            axis=1,
        )

        dot = np.einsum("ij,ij->i", frag_grad, colors)
        contribution = dot * self.weights
        suffix = np.zeros(len(self.prim))
        running = self.seg_transmittance * (grad[self.seg_pixel] @ self.background)
        longest = int(self.seg_len.max()) if len(self.seg_len) else 0
        for k in reversed(range(longest)):
            segments, frag = self._slots(k)
            suffix[frag] = running[segments]
            running[segments] += contribution[frag]
        grad_alpha = np.where(
            self.used, self.t_before * dot - suffix / (1.0 - self.alpha), 0.0
        )
        grad_raw = np.where(self.raw_alpha < ALPHA_CAP, grad_alpha, 0.0)

        grad_opacities = np.bincount(self.prim, weights=grad_raw * self.weight, minlength=count)
        grad_weight = grad_raw * self.scene.opacities[self.prim] * self.weight
        sigma = self.sigma[self.prim]
        sigma2 = sigma * sigma
        grad_u = np.bincount(self.prim, weights=grad_weight * self.dx / sigma2, minlength=count)
        grad_v = np.bincount(self.prim, weights=grad_weight * self.dy / sigma2, minlength=count)
        grad_sigma = np.bincount(
            self.prim,
            weights=grad_weight * (self.dx * self.dx + self.dy * self.dy) / (sigma2 * sigma),
            minlength=count,
        )

        z = self.depth
        x, y = self.local[:, 0], self.local[:, 1]
        grad_local = np.stack(
            [
                grad_u * cam.fx / z,
                grad_v * cam.fy / z,
                -grad_u * cam.fx * x / (z * z)
                - grad_v * cam.fy * y / (z * z)
                - grad_sigma * self.sigma / z,
            ],
            axis=1,
        )
        grad_positions = grad_local @ cam.world_to_camera.rotation
        grad_scales = grad_sigma * cam.fx / z
        return RenderGradients(
            colors=grad_colors,
            opacities=grad_opacities,
            positions=grad_positions,
            scales=grad_scales,
            twist=None,
        )


def render(scene, cam, background=DEFAULT_BACKGROUND):
    # type: (GaussianScene, Camera, Any) -> Tuple[np.ndarray, np.ndarray]
    """Render ``scene`` from ``cam``.

    :return: ``(image, depth)``, ``(H, W, 3)`` colors and ``(H, W)`` depths
        (``inf`` where coverage never exceeds one half)
    """
    forward = RenderPass(scene, cam, background)
    return forward.image, forward.depth_buffer


def render_backward(scene, cam, grad_pixels, background=DEFAULT_BACKGROUND):
    # type: (GaussianScene, Camera, np.ndarray, Any) -> RenderGradients
    """Exact gradients of the compositing w.r.t. c, alpha, mu and s."""
    return RenderPass(scene, cam, background).backward(grad_pixels)


def twist_gradient(points, grad_points):
    # type: (np.ndarray, np.ndarray) -> np.ndarray
    """Chain point gradients through a left perturbation ``Exp(dxi) p``."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    grad_points = np.asarray(grad_points, dtype=np.float64).reshape(-1, 3)
    return np.concatenate([grad_points.sum(axis=0), np.cross(points, grad_points).sum(axis=0)])


def photometric_loss(scene, cams, targets, masks=None, background=DEFAULT_BACKGROUND, with_grad=True):
    # type: (GaussianScene, Sequence[Camera], Sequence[np.ndarray], Optional[Sequence[np.ndarray]], Any, bool) -> Tuple[float, np.ndarray]
    """Mean over views of the (masked) mean absolute error and its position gradient.

    Without ``with_grad`` the backward pass is skipped and the gradient stays zero.

    :return: ``(loss, grad_positions)`` with ``grad_positions`` shaped ``(N, 3)``
    """
    loss = 0.0
    grad_positions = np.zeros((len(scene), 3))
    views = len(cams)
    for index, (cam, target) in enumerate(zip(cams, targets)):
        forward = RenderPass(scene, cam, background)
        diff = forward.image - target
        if masks is None:
            weights = np.full(diff.shape[:2], 1.0 / diff[..., 0].size)
        else:
            mask = np.asarray(masks[index], dtype=bool)
            selected = int(mask.sum())
            if not selected:
                continue
            weights = mask / float(selected)
        weights = weights[..., None] / (3.0 * views)
        loss += float(np.sum(np.abs(diff) * weights))
        if with_grad:
            grad_positions += forward.backward(np.sign(diff) * weights).positions
    return loss, grad_positions


def alignment_loss(scene, subset, transform, cams, targets, masks=None, background=DEFAULT_BACKGROUND):
    # type: (GaussianScene, ObjectSubset, RigidTransform, Sequence[Camera], Sequence[np.ndarray], Optional[Sequence[np.ndarray]], Any) -> float
    """Photometric loss with the subset moved by ``transform``."""
    posed = apply_transform(scene, subset, transform)
    return photometric_loss(posed, cams, targets, masks, background, with_grad=False)[0]


def pose_gradient(scene, subset, xi_current, cams, targets, masks=None, background=DEFAULT_BACKGROUND):
    # type: (GaussianScene, ObjectSubset, Twist, Sequence[Camera], Sequence[np.ndarray], Optional[Sequence[np.ndarray]], Any) -> Tuple[float, np.ndarray]
    """Loss and gradient w.r.t. a left perturbation of the subset pose.

    The subset primitives of ``scene`` are posed by ``Exp(xi_current)`` and the
    rest of the scene is composited unchanged.

    :return: ``(loss, grad)`` with ``grad`` ordered ``(rho, omega)``
    """
    posed = apply_transform(scene, subset, se3_exp(xi_current))
    loss, grad_positions = photometric_loss(posed, cams, targets, masks, background)
    indices = subset.indices
    return loss, twist_gradient(posed.positions[indices], grad_positions[indices])
