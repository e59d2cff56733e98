"""Image losses with pixel gradients: mean absolute error and SSIM."""

from typing import Tuple  # pylint: disable=unused-import

import numpy as np
from scipy.signal import convolve2d

from .exceptions import DimensionMismatch, ImageTooSmall

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1 = 0.01
K2 = 0.03
DYNAMIC_RANGE = 1.0
C1 = (K1 * DYNAMIC_RANGE) ** 2
C2 = (K2 * DYNAMIC_RANGE) ** 2


def _gaussian_window():
    # type: () -> np.ndarray
    offsets = np.arange(WINDOW_SIZE) - (WINDOW_SIZE - 1) / 2.0
    line = np.exp(-(offsets ** 2) / (2.0 * WINDOW_SIGMA ** 2))
    line /= line.sum()
    return np.outer(line, line)


WINDOW = _gaussian_window()


def _check_pair(a, b):
    # type: (np.ndarray, np.ndarray) -> Tuple[np.ndarray, np.ndarray]
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"Image shapes differ: {a.shape} vs {b.shape}.")
    return a, b


def l1_loss(a, b):
    # type: (np.ndarray, np.ndarray) -> float
    """Mean absolute difference over all pixel channels."""
    a, b = _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def l1_grad(a, b):
    # type: (np.ndarray, np.ndarray) -> np.ndarray
    """Derivative of :func:`l1_loss` w.r.t. ``a``; zero where the images agree."""
    a, b = _check_pair(a, b)
    return np.sign(a - b) / a.size


def _channels(image):
    # type: (np.ndarray) -> np.ndarray
    return image[..., None] if image.ndim == 2 else image


def _filter(image):
    # type: (np.ndarray) -> np.ndarray
    return convolve2d(image, WINDOW, mode="valid")


def _filter_adjoint(image):
    # type: (np.ndarray) -> np.ndarray
    # the window is symmetric, so the adjoint of "valid" is "full"
    return convolve2d(image, WINDOW, mode="full")


def _ssim_channel(a, b, with_grad):
    # type: (np.ndarray, np.ndarray, bool) -> Tuple[float, np.ndarray]
    mu_a, mu_b = _filter(a), _filter(b)
    e_aa, e_bb, e_ab = _filter(a * a), _filter(b * b), _filter(a * b)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    a1 = 2.0 * mu_a * mu_b + C1
    a2 = 2.0 * cov + C2
    b1 = mu_a * mu_a + mu_b * mu_b + C1
    b2 = var_a + var_b + C2
    index_map = a1 * a2 / (b1 * b2)
    value = float(index_map.mean())
    if not with_grad:
        return value, np.zeros(0)

    scale = 1.0 / index_map.size
    d_mu = (2.0 * mu_b * (a2 - a1)) / (b1 * b2) - index_map * (2.0 * mu_a / b1 - 2.0 * mu_a / b2)
    d_e_aa = -index_map / b2
    d_e_ab = 2.0 * a1 / (b1 * b2)
    grad = (
        _filter_adjoint(scale * d_mu)
        + 2.0 * a * _filter_adjoint(scale * d_e_aa)
        + b * _filter_adjoint(scale * d_e_ab)
    )
    return value, grad


def _ssim(a, b, with_grad):
    # type: (np.ndarray, np.ndarray, bool) -> Tuple[float, np.ndarray]
    a, b = _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < WINDOW_SIZE:
        raise ImageTooSmall(
            f"SSIM needs both sides >= {WINDOW_SIZE} pixels, got {a.shape[1]}x{a.shape[0]}."
        )
    ca, cb = _channels(a), _channels(b)
    count = ca.shape[2]
    total = 0.0
    grads = []
    for channel in range(count):
        value, grad = _ssim_channel(ca[..., channel], cb[..., channel], with_grad)
        total += value
        grads.append(grad / count)
    if not with_grad:
        return total / count, np.zeros(0)
    grad = np.stack(grads, axis=-1)
    return total / count, grad.reshape(a.shape)


def ssim(a, b):
    # type: (np.ndarray, np.ndarray) -> float
    """Mean SSIM, 11x11 Gaussian window with sigma 1.5, averaged over channels.

    :raises DimensionMismatch: shapes differ
    :raises ImageTooSmall: a side is shorter than the window
    """
    return _ssim(a, b, with_grad=False)[0]


def ssim_grad(a, b):
    # type: (np.ndarray, np.ndarray) -> np.ndarray
    """Derivative of :func:`ssim` w.r.t. ``a``."""
    return _ssim(a, b, with_grad=True)[1]


def photometric_objective(rendered, target, lambda_s):
    # type: (np.ndarray, np.ndarray, float) -> Tuple[float, np.ndarray]
    """``(1 - lambda_s) * L1 + lambda_s * (1 - SSIM)`` and its pixel gradient."""
    loss = (1.0 - lambda_s) * l1_loss(rendered, target)
    grad = (1.0 - lambda_s) * l1_grad(rendered, target)
    if lambda_s > 0.0:
        value, ssim_gradient = _ssim(rendered, target, with_grad=True)
        loss += lambda_s * (1.0 - value)
        grad = grad - lambda_s * ssim_gradient
    return loss, grad
