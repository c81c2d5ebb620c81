"""Differentiable forward/backward alpha-blending of 2D Gaussians.

A viewpoint is an axis-aligned crop of the scene canvas. Rendering
composites primitives front-to-back in their fixed blend-order key:
``C(p) = sum_i c_i * alpha_i(p) * prod_{j<i} (1 - alpha_j(p))`` with
``alpha_i = o_i * exp(-0.5 * d^T Sigma_i^{-1} d)``.

Per viewpoint, a primitive participates in blending (is "visible") iff
its opacity exceeds 1/255, its 3-sigma bounding box touches the crop,
and its alpha exceeds 1/255 on at least one pixel. Excluded primitives
receive exactly zero gradient from that viewpoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import ALPHA_MAX, Q_CUTOFF, alpha_pass, backward_pass, blend_pass, depth_blend_pass
from .gradients import ParamGrads
from .primitives import ACTIVE_OPACITY_THRESHOLD, PrimitiveSet

__all__ = [
    "T_EPS",
    "Viewpoint",
    "BlendRecord",
    "compute_visibility",
    "render_forward",
    "render_backward",
    "render_depth",
]

# Early-termination threshold: blending of a pixel stops once its
# transmittance falls below this.
T_EPS = 1e-4


@dataclass(frozen=True)
class Viewpoint:
    """Axis-aligned crop: origin in scene units, size in pixels."""

    origin: tuple[float, float]
    shape: tuple[int, int]  # (height, width)
    pixels_per_unit: float = 1.0

    def __post_init__(self):
        h, w = self.shape
        if h < 1 or w < 1:
            raise ValueError("crop must be at least 1x1")
        if not (self.pixels_per_unit > 0):
            raise ValueError("pixels_per_unit must be positive")

    @property
    def n_pixels(self) -> int:
        return self.shape[0] * self.shape[1]

    def extent(self) -> tuple[float, float, float, float]:
        """Crop rectangle (x0, y0, x1, y1) in scene units."""
        h, w = self.shape
        x0, y0 = self.origin
        return x0, y0, x0 + w / self.pixels_per_unit, y0 + h / self.pixels_per_unit

    def to_pixel(self, xy: np.ndarray) -> np.ndarray:
        """Scene coordinates -> crop pixel coordinates."""
        return (np.asarray(xy, dtype=np.float64) - np.asarray(self.origin)) * self.pixels_per_unit

    def to_scene(self, xy_px: np.ndarray) -> np.ndarray:
        return np.asarray(xy_px, dtype=np.float64) / self.pixels_per_unit + np.asarray(self.origin)


@dataclass
class BlendRecord:
    """Everything the forward pass saw, in blend order.

    ``order`` maps record rows to primitive ids; ``alpha`` and
    ``transmittance`` are (V, H, W) with ``transmittance[i]`` the T each
    entry was blended against; ``n_blend`` counts entries blended per
    pixel before early termination.
    """

    order: np.ndarray
    alpha: np.ndarray
    transmittance: np.ndarray
    n_blend: np.ndarray
    t_final: np.ndarray
    n_skipped: int
    # cached projection of the visible rows, consumed by the backward pass
    mu_px: np.ndarray
    conic_px: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    inv_sq_scale: np.ndarray  # (V, 2) = exp(-2*kappa)
    cos_rot: np.ndarray
    sin_rot: np.ndarray
    blend_image: np.ndarray

    def pixel_entries(self, row: int, col: int):
        """Ordered (primitive id, alpha, T) triples blended at a pixel.

        Entries whose alpha is zero at this pixel contributed nothing and
        are omitted; the transmittance recurrence holds across the rest.
        """
        out = []
        for i in range(int(self.n_blend[row, col])):
            a = float(self.alpha[i, row, col])
            if a == 0.0:
                continue
            out.append((int(self.order[i]), a, float(self.transmittance[i, row, col])))
        return out


def _project(pset: PrimitiveSet, vp: Viewpoint):
    """Vectorized per-primitive projection into crop pixel coordinates."""
    c = np.cos(pset.rot)
    s = np.sin(pset.rot)
    with np.errstate(over="ignore", under="ignore"):
        inv_sq = np.exp(-2.0 * pset.kappa)  # (N, 2) eigenvalues of Sigma^-1
        sq = np.exp(2.0 * pset.kappa)  # (N, 2) eigenvalues of Sigma
    i1, i2 = inv_sq[:, 0], inv_sq[:, 1]
    m11 = i1 * c * c + i2 * s * s
    m12 = (i1 - i2) * c * s
    m22 = i1 * s * s + i2 * c * c
    ppu2 = vp.pixels_per_unit ** 2
    conic_px = np.stack([m11, m12, m22], axis=1) / ppu2
    # 3-sigma bounding half extents in scene units
    sxx = c * c * sq[:, 0] + s * s * sq[:, 1]
    syy = s * s * sq[:, 0] + c * c * sq[:, 1]
    ok = (
        np.isfinite(conic_px).all(axis=1)
        & np.isfinite(sxx) & np.isfinite(syy)
        & (i1 > 0.0) & (i2 > 0.0)
    )
    return conic_px, sxx, syy, inv_sq, c, s, ok


def _candidates(pset: PrimitiveSet, vp: Viewpoint):
    """Depth-ordered candidate rows plus per-pixel alphas and skip count."""
    conic_px, sxx, syy, inv_sq, cos_r, sin_r, ok = _project(pset, vp)
    opacity = pset.opacity()
    n_skipped = int((~ok & pset.alive).sum())
    x0, y0, x1, y1 = vp.extent()
    with np.errstate(invalid="ignore"):
        ext_x = 3.0 * np.sqrt(sxx)
        ext_y = 3.0 * np.sqrt(syy)
        in_box = (
            (pset.mu[:, 0] + ext_x >= x0) & (pset.mu[:, 0] - ext_x <= x1)
            & (pset.mu[:, 1] + ext_y >= y0) & (pset.mu[:, 1] - ext_y <= y1)
        )
    cand = pset.alive & ok & (opacity > ACTIVE_OPACITY_THRESHOLD) & in_box
    ids = np.flatnonzero(cand)
    order = ids[np.argsort(pset.depth[ids], kind="stable")]
    h, w = vp.shape
    mu_px = np.ascontiguousarray(vp.to_pixel(pset.mu[order]))
    with np.errstate(invalid="ignore"):
        win_ext = np.sqrt(Q_CUTOFF * np.stack([sxx, syy], axis=1)) * vp.pixels_per_unit
    alpha, amax = alpha_pass(
        mu_px, np.ascontiguousarray(conic_px[order]),
        np.ascontiguousarray(opacity[order]),
        np.ascontiguousarray(win_ext[order]), h, w,
    )
    keep = amax > ACTIVE_OPACITY_THRESHOLD
    return {
        "order": order, "keep": keep, "alpha": alpha, "mu_px": mu_px,
        "conic_px": conic_px, "opacity": opacity, "inv_sq": inv_sq,
        "cos": cos_r, "sin": sin_r, "n_skipped": n_skipped,
    }


def compute_visibility(pset: PrimitiveSet, vp: Viewpoint) -> np.ndarray:
    """Boolean mask over primitives contributing to this viewpoint."""
    if len(pset) == 0:
        raise ValueError("primitive set is empty")
    stage = _candidates(pset, vp)
    mask = np.zeros(len(pset), dtype=bool)
    mask[stage["order"][stage["keep"]]] = True
    return mask


def render_forward(pset: PrimitiveSet, vp: Viewpoint):
    """Render a crop; returns (image, BlendRecord, visibility mask)."""
    stage = _candidates(pset, vp)
    vis_rows = stage["order"][stage["keep"]]
    mask = np.zeros(len(pset), dtype=bool)
    mask[vis_rows] = True

    alpha = np.ascontiguousarray(stage["alpha"][stage["keep"]])
    color = np.ascontiguousarray(np.clip(pset.color[vis_rows], 0.0, 1.0))
    image, tbuf, n_blend, t_final = blend_pass(alpha, color, T_EPS)

    record = BlendRecord(
        order=vis_rows,
        alpha=alpha,
        transmittance=tbuf,
        n_blend=n_blend,
        t_final=t_final,
        n_skipped=stage["n_skipped"],
        mu_px=np.ascontiguousarray(stage["mu_px"][stage["keep"]]),
        conic_px=np.ascontiguousarray(stage["conic_px"][vis_rows]),
        opacity=np.ascontiguousarray(stage["opacity"][vis_rows]),
        color=color,
        inv_sq_scale=np.ascontiguousarray(stage["inv_sq"][vis_rows]),
        cos_rot=np.ascontiguousarray(stage["cos"][vis_rows]),
        sin_rot=np.ascontiguousarray(stage["sin"][vis_rows]),
        blend_image=image,
    )
    return image, record, mask


def render_backward(record: BlendRecord, pset: PrimitiveSet, vp: Viewpoint,
                    dl_dc: np.ndarray) -> ParamGrads:
    """Analytic gradients of the rendered crop w.r.t. raw parameters.

    Invisible primitives receive exactly zero on every attribute.
    """
    if record.order.size and record.order.max() >= len(pset):
        raise ValueError("blend record does not match this primitive set")
    h, w = vp.shape
    if dl_dc.shape != (h, w, 3):
        raise ValueError(f"gradient image must be {(h, w, 3)}, got {dl_dc.shape}")

    grads = ParamGrads.zeros_like(pset)
    if record.order.size == 0:
        return grads

    g_mu_px, g_conic, g_opa, g_col = backward_pass(
        record.alpha, record.transmittance, record.n_blend,
        record.mu_px, record.conic_px, record.opacity, record.color,
        record.blend_image, np.ascontiguousarray(dl_dc, dtype=np.float64),
    )

    ppu = vp.pixels_per_unit
    rows = record.order
    grads.mu[rows] = g_mu_px * ppu

    # chain conic (inverse covariance over ppu^2) back to log-scales and angle
    g_m = g_conic / (ppu * ppu)
    c, s = record.cos_rot, record.sin_rot
    i1, i2 = record.inv_sq_scale[:, 0], record.inv_sq_scale[:, 1]
    g_i1 = g_m[:, 0] * c * c + g_m[:, 1] * c * s + g_m[:, 2] * s * s
    g_i2 = g_m[:, 0] * s * s - g_m[:, 1] * c * s + g_m[:, 2] * c * c
    grads.kappa[rows, 0] = g_i1 * (-2.0 * i1)
    grads.kappa[rows, 1] = g_i2 * (-2.0 * i2)
    grads.rot[rows] = (
        g_m[:, 0] * 2.0 * c * s * (i2 - i1)
        + g_m[:, 1] * (i1 - i2) * (c * c - s * s)
        + g_m[:, 2] * 2.0 * c * s * (i1 - i2)
    )

    o = record.opacity
    grads.tau[rows] = g_opa * o * (1.0 - o)

    # colors are clamped to [0,1] in the forward pass
    raw = pset.color[rows]
    grads.color[rows] = g_col * ((raw > 0.0) & (raw < 1.0))
    return grads


def render_depth(pset: PrimitiveSet, vp: Viewpoint) -> np.ndarray:
    """Transmittance-weighted depth image; background pixels stay 0."""
    if len(pset) == 0:
        return np.zeros(vp.shape)
    stage = _candidates(pset, vp)
    vis_rows = stage["order"][stage["keep"]]
    alpha = np.ascontiguousarray(stage["alpha"][stage["keep"]])
    depth = np.ascontiguousarray(pset.depth[vis_rows])
    return depth_blend_pass(alpha, depth, T_EPS)
