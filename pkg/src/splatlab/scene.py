"""Synthetic scene generation for the desk-scale testbed.

A scene is a square canvas populated by ground-truth Gaussians, observed
through a grid of overlapping crops ("viewpoints") whose union covers the
canvas. The initial training set is the ground truth jittered, born at
low opacity, plus redundant duplicates scattered around random ground
truth primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .primitives import PrimitiveSet, inverse_opacity
from .renderer import Viewpoint, render_forward
from .rng import RngHub

__all__ = ["SceneSpec", "make_viewpoints", "gen_scene"]

# Opacity at which fresh primitives are born.
INITIAL_OPACITY = 0.1


@dataclass(frozen=True)
class SceneSpec:
    canvas: int = 128
    gt_count: int = 50
    redundancy: float = 3.0
    crop_size: int = 64
    crops_x: int = 4
    crops_y: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.canvas < 32:
            raise ValueError("canvas must be at least 32x32")
        if self.gt_count < 1:
            raise ValueError("scene needs at least one ground-truth primitive")
        if self.redundancy < 0:
            raise ValueError("redundancy factor must be nonnegative")
        if not (1 <= self.crop_size <= self.canvas):
            raise ValueError("crop size must fit inside the canvas")
        for n in (self.crops_x, self.crops_y):
            if n < 1:
                raise ValueError("need at least one crop per axis")
        # union of crops must cover the canvas
        for count in (self.crops_x, self.crops_y):
            if count == 1 and self.crop_size < self.canvas:
                raise ValueError("a single crop per axis must span the canvas")
            if count > 1:
                gap = (self.canvas - self.crop_size) / (count - 1)
                if gap > self.crop_size:
                    raise ValueError("crops leave gaps in canvas coverage")

    @property
    def n_viewpoints(self) -> int:
        return self.crops_x * self.crops_y

    @property
    def extent(self) -> float:
        return math.hypot(self.canvas, self.canvas)

    @property
    def initial_count(self) -> int:
        return self.gt_count + int(round(self.gt_count * self.redundancy))


def make_viewpoints(spec: SceneSpec) -> list:
    """Grid of overlapping crops whose union is the full canvas."""
    def origins(count):
        if count == 1:
            return [0.0]
        return list(np.linspace(0.0, spec.canvas - spec.crop_size, count))

    vps = []
    for oy in origins(spec.crops_y):
        for ox in origins(spec.crops_x):
            vps.append(Viewpoint(origin=(ox, oy), shape=(spec.crop_size, spec.crop_size)))
    return vps


def full_canvas_viewpoint(spec: SceneSpec) -> Viewpoint:
    return Viewpoint(origin=(0.0, 0.0), shape=(spec.canvas, spec.canvas))


# Ground truth mixes a few broad backdrop blobs with fine detail blobs so
# targets carry structure everywhere and a capped model stays underfit.
_BACKDROP_FRACTION = 0.15


def _gt_set(spec: SceneSpec, hub: RngHub) -> PrimitiveSet:
    rng = hub.stream("scene-gt")
    n = spec.gt_count
    n_back = max(1, int(round(n * _BACKDROP_FRACTION))) if n >= 4 else 0
    n_detail = n - n_back
    margin = min(4.0, spec.canvas / 16.0)
    mu = rng.uniform(margin, spec.canvas - margin, size=(n, 2))
    unit = spec.canvas / 128.0
    sigma = np.concatenate([
        rng.uniform(5.0, 12.0, size=(n_back, 2)),
        rng.uniform(0.5, 1.5, size=(n_detail, 2)),
    ]) * unit
    kappa = np.log(sigma)
    rot = rng.uniform(0.0, np.pi, size=n)
    tau = np.asarray(inverse_opacity(rng.uniform(0.55, 0.95, size=n)))
    color = rng.uniform(0.15, 0.95, size=(n, 3))
    # backdrop blobs render first so detail stays on top
    depth = np.concatenate([rng.uniform(0.8, 1.0, size=n_back),
                            rng.uniform(0.0, 0.8, size=n_detail)])
    return PrimitiveSet(mu=mu, kappa=kappa, rot=rot, tau=tau, color=color, depth=depth)


def gen_scene(spec: SceneSpec, hub: RngHub = None):
    """Ground truth, per-viewpoint target images and the initial set."""
    hub = hub or RngHub(spec.seed)
    gt = _gt_set(spec, hub)
    viewpoints = make_viewpoints(spec)
    targets = [render_forward(gt, vp)[0] for vp in viewpoints]

    rng = hub.stream("scene-init")
    n_dup = int(round(spec.gt_count * spec.redundancy))
    base_src = np.arange(spec.gt_count)
    dup_src = rng.integers(0, spec.gt_count, size=n_dup)
    src = np.concatenate([base_src, dup_src])
    jitter_sd = np.concatenate([
        np.full(spec.gt_count, 1.5),
        np.full(n_dup, 3.0),
    ])

    n = len(src)
    mu = gt.mu[src] + rng.standard_normal((n, 2)) * jitter_sd[:, None]
    mu = np.clip(mu, 1.0, spec.canvas - 1.0)
    kappa = gt.kappa[src] + rng.normal(0.0, 0.2, size=(n, 2))
    rot = gt.rot[src] + rng.normal(0.0, 0.3, size=n)
    tau = np.full(n, inverse_opacity(INITIAL_OPACITY))
    # the jittered copies start near the right color; the redundant
    # duplicates carry arbitrary color and must earn their keep
    color = np.concatenate([
        np.clip(gt.color[base_src] + rng.normal(0.0, 0.1, size=(spec.gt_count, 3)), 0.05, 0.95),
        rng.uniform(0.05, 0.95, size=(n_dup, 3)),
    ])
    depth = hub.stream("depth-keys").random(n)
    initial = PrimitiveSet(mu=mu, kappa=kappa, rot=rot, tau=tau, color=color, depth=depth)
    return gt, targets, initial, viewpoints
