"""Numba kernels for forward/backward alpha compositing.

All kernels walk pixels in row-major order and primitives in blend
(front-to-back) order, so accumulation is sequential and runs are
bit-for-bit reproducible. Inputs are expected in crop pixel coordinates
with pixel (r, c) centered at (c + 0.5, r + 0.5).
"""

from __future__ import annotations

import math

import numba
import numpy as np

# Alphas are clamped just below 1 so transmittance never collapses to an
# exact zero inside the backward division by (1 - alpha).
ALPHA_MAX = 1.0 - 1e-6
# exp(-Q_CUTOFF/2) ~ 2.3e-16: contributions below this are snapped to
# zero, two orders under the tightest tolerance checked against the
# naive blending oracle.
Q_CUTOFF = 72.0


@numba.njit(cache=True)
def alpha_pass(mu, conic, opacity, ext, height, width):
    """Per-pixel alphas for every candidate primitive.

    ``ext[k]`` holds the pixel half-extents of the candidate's
    ``q <= Q_CUTOFF`` ellipse, bounding the window that needs evaluating.
    Returns ``(alpha, amax)`` where ``alpha[k, r, c]`` is the candidate's
    alpha at that pixel and ``amax[k]`` its maximum over the crop.
    """
    n = mu.shape[0]
    alpha = np.zeros((n, height, width))
    amax = np.zeros(n)
    for k in range(n):
        a = conic[k, 0]
        b = conic[k, 1]
        c = conic[k, 2]
        mx = mu[k, 0]
        my = mu[k, 1]
        o = opacity[k]
        r0 = int(math.ceil(my - ext[k, 1] - 0.5))
        r1 = int(math.floor(my + ext[k, 1] - 0.5))
        c0 = int(math.ceil(mx - ext[k, 0] - 0.5))
        c1 = int(math.floor(mx + ext[k, 0] - 0.5))
        if r0 < 0:
            r0 = 0
        if r1 > height - 1:
            r1 = height - 1
        if c0 < 0:
            c0 = 0
        if c1 > width - 1:
            c1 = width - 1
        best = 0.0
        for r in range(r0, r1 + 1):
            dy = (r + 0.5) - my
            for col in range(c0, c1 + 1):
                dx = (col + 0.5) - mx
                q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                if q > Q_CUTOFF:
                    continue
                al = o * math.exp(-0.5 * q)
                if al > ALPHA_MAX:
                    al = ALPHA_MAX
                alpha[k, r, col] = al
                if al > best:
                    best = al
        amax[k] = best
    return alpha, amax


@numba.njit(cache=True)
def blend_pass(alpha, color, t_eps):
    """Front-to-back compositing over pre-sorted visible primitives.

    ``alpha`` is (V, H, W) in blend order and ``color`` the matching
    clamped RGB rows. Blending of a pixel stops once transmittance falls
    below ``t_eps``; the number of entries walked is recorded so the
    backward pass replays exactly the same truncation.
    """
    n, height, width = alpha.shape
    image = np.zeros((height, width, 3))
    tbuf = np.zeros((n, height, width))
    nblend = np.zeros((height, width), dtype=np.int32)
    tfinal = np.ones((height, width))
    for r in range(height):
        for col in range(width):
            t = 1.0
            count = 0
            for i in range(n):
                if t < t_eps:
                    break
                count += 1
                al = alpha[i, r, col]
                if al == 0.0:
                    continue
                tbuf[i, r, col] = t
                w = al * t
                image[r, col, 0] += w * color[i, 0]
                image[r, col, 1] += w * color[i, 1]
                image[r, col, 2] += w * color[i, 2]
                t *= 1.0 - al
            nblend[r, col] = count
            tfinal[r, col] = t
    return image, tbuf, nblend, tfinal


@numba.njit(cache=True)
def depth_blend_pass(alpha, depth, t_eps):
    """Transmittance-weighted depth: D(p) = sum_i d_i * alpha_i * T_i."""
    n, height, width = alpha.shape
    out = np.zeros((height, width))
    for r in range(height):
        for col in range(width):
            t = 1.0
            for i in range(n):
                if t < t_eps:
                    break
                al = alpha[i, r, col]
                if al == 0.0:
                    continue
                out[r, col] += depth[i] * al * t
                t *= 1.0 - al
    return out


@numba.njit(cache=True)
def backward_pass(alpha, tbuf, nblend, mu, conic, opacity, color, blend_image, dldc):
    """Adjoint of ``blend_pass`` for the entries it actually blended.

    Produces gradients in crop pixel coordinates: positions, conic
    (inverse covariance) components, activated opacities and colors.
    The suffix trick evaluates d(image)/d(alpha_i) as
    ``c_i * T_i - S_i / (1 - alpha_i)`` with ``S_i`` the color mass
    accumulated behind entry ``i``.
    """
    n, height, width = alpha.shape
    g_mu = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_opacity = np.zeros(n)
    g_color = np.zeros((n, 3))
    for r in range(height):
        for col in range(width):
            gr = dldc[r, col, 0]
            gg = dldc[r, col, 1]
            gb = dldc[r, col, 2]
            if gr == 0.0 and gg == 0.0 and gb == 0.0:
                continue
            acc_r = 0.0
            acc_g = 0.0
            acc_b = 0.0
            for i in range(nblend[r, col]):
                al = alpha[i, r, col]
                if al == 0.0:
                    continue
                t = tbuf[i, r, col]
                w = al * t
                cur_r = w * color[i, 0]
                cur_g = w * color[i, 1]
                cur_b = w * color[i, 2]
                # Color mass blended behind this entry at this pixel.
                suf_r = blend_image[r, col, 0] - acc_r - cur_r
                suf_g = blend_image[r, col, 1] - acc_g - cur_g
                suf_b = blend_image[r, col, 2] - acc_b - cur_b

                g_color[i, 0] += gr * w
                g_color[i, 1] += gg * w
                g_color[i, 2] += gb * w

                one_m = 1.0 - al
                d_alpha = (
                    gr * (color[i, 0] * t - suf_r / one_m)
                    + gg * (color[i, 1] * t - suf_g / one_m)
                    + gb * (color[i, 2] * t - suf_b / one_m)
                )
                if al < ALPHA_MAX:
                    o = opacity[i]
                    g_opacity[i] += d_alpha * (al / o)
                    d_q = -0.5 * al * d_alpha
                    dx = (col + 0.5) - mu[i, 0]
                    dy = (r + 0.5) - mu[i, 1]
                    a = conic[i, 0]
                    b = conic[i, 1]
                    c = conic[i, 2]
                    g_mu[i, 0] += -d_q * (2.0 * a * dx + 2.0 * b * dy)
                    g_mu[i, 1] += -d_q * (2.0 * b * dx + 2.0 * c * dy)
                    g_conic[i, 0] += d_q * dx * dx
                    g_conic[i, 1] += d_q * 2.0 * dx * dy
                    g_conic[i, 2] += d_q * dy * dy

                acc_r += cur_r
                acc_g += cur_g
                acc_b += cur_b
    return g_mu, g_conic, g_opacity, g_color
