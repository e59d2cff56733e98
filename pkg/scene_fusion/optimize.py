"""First-order optimizer for Gaussian scenes with densification and pruning.

Colors and positions are updated directly. Opacity is updated in logit space
and scale in log space, then mapped back, so updates stay inside the valid
ranges. Rows outside the trainable mask are never written.
"""

from typing import Any, Optional  # pylint: disable=unused-import

import numpy as np

from .render import RenderGradients
from .scene import GaussianScene

MIN_OPACITY = 1e-3
MAX_OPACITY = 1.0 - 1e-6
MIN_SCALE = 1e-4
SPLIT_FACTOR = 1.6
BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-15


def _logit(values):
    # type: (np.ndarray) -> np.ndarray
    values = np.clip(values, MIN_OPACITY, MAX_OPACITY)
    return np.log(values / (1.0 - values))


def _sigmoid(values):
    # type: (np.ndarray) -> np.ndarray
    return 1.0 / (1.0 + np.exp(-values))


class _Adam(object):
    def __init__(self, shape, lr):
        # type: (Any, float) -> None
        self.lr = lr
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)

    def delta(self, rows, grad, step):
        # type: (np.ndarray, np.ndarray, int) -> np.ndarray
        self.m[rows] = BETA1 * self.m[rows] + (1.0 - BETA1) * grad
        self.v[rows] = BETA2 * self.v[rows] + (1.0 - BETA2) * grad * grad
        m_hat = self.m[rows] / (1.0 - BETA1 ** step)
        v_hat = self.v[rows] / (1.0 - BETA2 ** step)
        return -self.lr * m_hat / (np.sqrt(v_hat) + EPSILON)

    def reindex(self, order, extra):
        # type: (np.ndarray, int) -> None
        tail = (extra,) + self.m.shape[1:]
        self.m = np.concatenate([self.m[order], np.zeros(tail)])
        self.v = np.concatenate([self.v[order], np.zeros(tail)])


class GaussianOptimizer(object):
    """Adam over ``(c, alpha, mu, s)`` of the trainable rows of a scene copy.

    :param GaussianScene scene: starting point, copied
    :param trainable: boolean ``(N,)`` mask, all rows by default
    :param float position_lr: already scaled by the scene extent
    :param rng: ``numpy.random.Generator`` used by splitting
    """

    def __init__(
        self,
        scene,  # type: GaussianScene
        trainable=None,  # type: Optional[np.ndarray]
        position_lr=1.6e-4,  # type: float
        color_lr=2.5e-3,  # type: float
        opacity_lr=0.05,  # type: float
        scale_lr=5e-3,  # type: float
        rng=None,  # type: Optional[np.random.Generator]
    ):
        # type: (...) -> None
        self.scene = scene.copy()
        count = len(scene)
        if trainable is None:
            trainable = np.ones(count, dtype=bool)
        self.trainable = np.asarray(trainable, dtype=bool).reshape(count).copy()
        self.source_index = np.arange(count)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.steps = 0
        self._positions = _Adam((count, 3), position_lr)
        self._colors = _Adam((count, 3), color_lr)
        self._opacities = _Adam(count, opacity_lr)
        self._scales = _Adam(count, scale_lr)
        self.grad_accum = np.zeros(count)
        self.grad_count = np.zeros(count)

    def step(self, grads):
        # type: (RenderGradients) -> None
        """Apply one update from gradients computed on :attr:`scene`."""
        rows = np.nonzero(self.trainable)[0]
        if not len(rows):
            return
        self.steps += 1
        scene = self.scene
        scene.positions[rows] += self._positions.delta(rows, grads.positions[rows], self.steps)
        colors = scene.colors[rows] + self._colors.delta(rows, grads.colors[rows], self.steps)
        scene.colors[rows] = np.clip(colors, 0.0, 1.0)

        opacities = scene.opacities[rows]
        logit_grad = grads.opacities[rows] * opacities * (1.0 - opacities)
        logits = _logit(opacities) + self._opacities.delta(rows, logit_grad, self.steps)
        scene.opacities[rows] = np.clip(_sigmoid(logits), MIN_OPACITY, 1.0)

        scales = scene.scales[rows]
        log_grad = grads.scales[rows] * scales
        log_scales = np.log(scales) + self._scales.delta(rows, log_grad, self.steps)
        scene.scales[rows] = np.maximum(np.exp(log_scales), MIN_SCALE)

        self.grad_accum[rows] += np.linalg.norm(grads.positions[rows], axis=1)
        self.grad_count[rows] += 1

    def _reindex(self, order, extra_scene):
        # type: (np.ndarray, GaussianScene) -> None
        extra = len(extra_scene)
        self.scene = self.scene.subset(order).concat(extra_scene)
        self.trainable = np.concatenate([self.trainable[order], np.ones(extra, dtype=bool)])
        self.source_index = np.concatenate([self.source_index[order], np.full(extra, -1)])
        for moments in (self._positions, self._colors, self._opacities, self._scales):
            moments.reindex(order, extra)
        self.grad_accum = np.zeros(len(self.scene))
        self.grad_count = np.zeros(len(self.scene))

    def densify_and_prune(self, candidates, grad_threshold, size_threshold, prune_opacity):
        # type: (np.ndarray, float, float, float) -> None
        """Clone, split and prune the trainable rows selected by ``candidates``.

        Rows whose mean position-gradient norm reaches ``grad_threshold`` are
        cloned when their scale is at most ``size_threshold`` and split into two
        children at ``mu +/- 0.5 s`` along a random axis with scale ``s / 1.6``
        otherwise. Rows with opacity below ``prune_opacity`` are removed. New
        rows are appended; :attr:`source_index` keeps track of the others.
        """
        scene = self.scene
        window = np.asarray(candidates, dtype=bool).reshape(len(scene)) & self.trainable
        mean_grad = np.where(self.grad_count > 0, self.grad_accum / np.maximum(self.grad_count, 1), 0.0)
        dense = window & (mean_grad >= grad_threshold)
        clone = dense & (scene.scales <= size_threshold)
        split = dense & (scene.scales > size_threshold)
        prune = window & (scene.opacities < prune_opacity)

        split_rows = np.nonzero(split & ~prune)[0]
        axes = self.rng.normal(size=(len(split_rows), 3))
        axes /= np.maximum(np.linalg.norm(axes, axis=1, keepdims=True), 1e-12)
        offsets = 0.5 * scene.scales[split_rows, None] * axes
        children = scene.subset(np.concatenate([split_rows, split_rows]))
        children.positions += np.concatenate([offsets, -offsets])
        children.scales = np.maximum(children.scales / SPLIT_FACTOR, MIN_SCALE)

        cloned = scene.subset(np.nonzero(clone & ~prune)[0])
        keep = np.nonzero(~(prune | split))[0]
        self._reindex(keep, cloned.concat(children))
