"""Photometric loss (L1 + DSSIM) with analytic gradients, and the
coupled attribute-regularization gradients used by the baseline modes.

DSSIM is ``1 - SSIM`` with the conventional 11x11 Gaussian window
(sigma 1.5) and stabilizers C1 = 0.01^2, C2 = 0.03^2 on a [0, 1]
dynamic range; the map is evaluated on the valid interior and averaged
over windows and channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .primitives import PrimitiveSet, activate_scale, opacity_derivative

__all__ = [
    "WINDOW_SIZE",
    "LossReport",
    "dssim",
    "photometric_loss",
    "coupled_reg_grad",
]

WINDOW_SIZE = 11
_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2
_HALF = WINDOW_SIZE // 2


def _window() -> np.ndarray:
    x = np.arange(WINDOW_SIZE) - _HALF
    g = np.exp(-(x ** 2) / (2.0 * _SIGMA ** 2))
    return g / g.sum()

_WIN = _window()


def _filter_valid(img: np.ndarray) -> np.ndarray:
    """Separable window correlation, valid region only."""
    out = correlate1d(img, _WIN, axis=0, mode="constant")
    out = correlate1d(out, _WIN, axis=1, mode="constant")
    return out[_HALF:-_HALF, _HALF:-_HALF]


def _spread_full(gmap: np.ndarray, shape) -> np.ndarray:
    """Adjoint of :func:`_filter_valid`: embed and convolve back out."""
    canvas = np.zeros(shape)
    canvas[_HALF:-_HALF, _HALF:-_HALF] = gmap
    out = correlate1d(canvas, _WIN, axis=0, mode="constant")
    return correlate1d(out, _WIN, axis=1, mode="constant")


def _as_channels(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[:, :, None]
    return img


def dssim(a: np.ndarray, b: np.ndarray):
    """Structural dissimilarity and its gradient with respect to ``a``.

    Returns ``(value, d_value/d_a)``; ``dssim(x, x) == 0``.
    """
    a3, b3 = _as_channels(a), _as_channels(b)
    if a3.shape != b3.shape:
        raise ValueError(f"image shapes differ: {a3.shape} vs {b3.shape}")
    if a3.shape[0] < WINDOW_SIZE or a3.shape[1] < WINDOW_SIZE:
        raise ValueError(f"images must be at least {WINDOW_SIZE}x{WINDOW_SIZE}")

    grad = np.zeros_like(a3)
    total = 0.0
    n_ch = a3.shape[2]
    for ch in range(n_ch):
        x, y = a3[:, :, ch], b3[:, :, ch]
        mu_x = _filter_valid(x)
        mu_y = _filter_valid(y)
        xx = _filter_valid(x * x)
        yy = _filter_valid(y * y)
        xy = _filter_valid(x * y)
        var_x = xx - mu_x * mu_x
        var_y = yy - mu_y * mu_y
        cov = xy - mu_x * mu_y

        a1 = 2.0 * mu_x * mu_y + _C1
        a2 = 2.0 * cov + _C2
        b1 = mu_x * mu_x + mu_y * mu_y + _C1
        b2 = var_x + var_y + _C2
        denom = b1 * b2
        ssim_map = (a1 * a2) / denom
        total += float(ssim_map.mean())

        # Mean-SSIM partials routed through the windowed statistics; each
        # statistic's adjoint is a full convolution back onto the image.
        # d ssim / d mu_x collects four paths:
        #   through a1: 2 mu_y * a2 / denom
        #   through b1: -ssim * 2 mu_x / b1
        #   through var_x (= xx - mu_x^2): +ssim * 2 mu_x / b2
        #   through cov (= xy - mu_x mu_y): -(2 a1 / denom) * mu_y
        scale = 1.0 / ssim_map.size
        g_mu_x = (
            2.0 * mu_y * a2 / denom
            - ssim_map * 2.0 * mu_x / b1
            + ssim_map * 2.0 * mu_x / b2
            - 2.0 * a1 / denom * mu_y
        )
        g_xx = -ssim_map / b2
        g_xy = 2.0 * a1 / denom

        gx = _spread_full(scale * g_mu_x, x.shape)
        gx += 2.0 * x * _spread_full(scale * g_xx, x.shape)
        gx += y * _spread_full(scale * g_xy, x.shape)
        grad[:, :, ch] = gx

    mean_ssim = total / n_ch
    # anti-correlated inputs can push raw 1 - SSIM past 1; the reported
    # dissimilarity saturates there while the gradient keeps its descent
    # direction out of the saturated region
    value = min(max(1.0 - mean_ssim, 0.0), 1.0)
    g = -grad / n_ch
    if np.asarray(a).ndim == 2:
        g = g[:, :, 0]
    return value, g


def photometric_loss(render: np.ndarray, target: np.ndarray, lambda1: float):
    """(1 - lambda1) * mean-L1 + lambda1 * DSSIM, with d/d(render).

    The gradient image carries the mean normalization over pixels, which
    is what downstream optimizers consume as the per-view photometric
    gradient.
    """
    r3, t3 = _as_channels(render), _as_channels(target)
    if r3.shape != t3.shape:
        raise ValueError(f"image shapes differ: {r3.shape} vs {t3.shape}")
    if not (0.0 <= lambda1 <= 1.0):
        raise ValueError("lambda1 must lie in [0, 1]")
    diff = r3 - t3
    l1 = float(np.abs(diff).mean())
    grad = (1.0 - lambda1) * np.sign(diff) / diff.size
    value = (1.0 - lambda1) * l1
    if lambda1 > 0.0:
        ds, dgrad = dssim(r3, t3)
        value += lambda1 * ds
        grad = grad + lambda1 * dgrad
    if np.asarray(render).ndim == 2:
        grad = grad[:, :, 0]
    return value, grad


@dataclass
class LossReport:
    """One evaluation of the training objective at a viewpoint."""

    total: float
    photometric: float
    reg_value: float
    grad_image: np.ndarray
    reg_tau: np.ndarray = field(default=None)
    reg_kappa: np.ndarray = field(default=None)


def regularization_value(pset: PrimitiveSet, lambda_o: float, lambda_s: float) -> float:
    """lambda_o * |o|_1 + lambda_s * |s|_1 over alive primitives."""
    if lambda_o == 0.0 and lambda_s == 0.0:
        return 0.0
    alive = pset.alive
    o = pset.opacity()[alive]
    s = np.asarray(activate_scale(pset.kappa[alive]))
    return float(lambda_o * np.abs(o).sum() + lambda_s * np.abs(s).sum())


def coupled_reg_grad(pset: PrimitiveSet, visibility: np.ndarray,
                     lambda_o: float, lambda_s: float, apply_to_all: bool = False):
    """Gradients of the L1 attribute regularization, coupled form.

    Opacity and scale are strictly positive, so the outer L1 derivative
    is +1 and the gradients reduce to ``lambda_o * sigma'(tau) / N_v``
    and ``lambda_s * exp(kappa) / N_v`` with ``N_v`` the visible count.
    Rows receiving the gradient are the visible ones, or every alive row
    when ``apply_to_all`` (synchronous mode).
    """
    n = len(pset)
    g_tau = np.zeros(n)
    g_kappa = np.zeros((n, 2))
    n_vis = int(np.asarray(visibility).sum())
    if n_vis == 0 or (lambda_o == 0.0 and lambda_s == 0.0):
        return g_tau, g_kappa
    rows = pset.alive if apply_to_all else np.asarray(visibility, dtype=bool)
    if lambda_o != 0.0:
        g_tau[rows] = lambda_o * opacity_derivative(pset.tau[rows]) / n_vis
    if lambda_s != 0.0:
        g_kappa[rows] = lambda_s * np.asarray(activate_scale(pset.kappa[rows])) / n_vis
    return g_tau, g_kappa
