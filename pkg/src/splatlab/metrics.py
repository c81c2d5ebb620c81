"""Reconstruction-quality and primitive-count metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loss import dssim
from .optimizer import MomentState, moment_stats
from .primitives import PrimitiveSet, classify_active
from .renderer import render_forward

__all__ = ["PSNR_CAP", "MetricsRecord", "psnr", "compute_metrics", "delta_n"]

PSNR_CAP = 99.0


@dataclass
class MetricsRecord:
    iteration: int
    psnr: float
    ssim: float
    n_p: int
    n_a: int
    n_d: int
    delta_na: float = None  # vs a named baseline, when one exists
    mean_mv: float = 0.0  # mean |m/sqrt(v)| of the opacity moments
    max_mv: float = 0.0

    CSV_HEADER = "iter,psnr,ssim,np,na,nd,delta_na,mean_mv,max_mv"

    def csv_row(self) -> str:
        delta = "" if self.delta_na is None else repr(float(self.delta_na))
        return ",".join([
            str(self.iteration), repr(float(self.psnr)), repr(float(self.ssim)),
            str(self.n_p), str(self.n_a), str(self.n_d), delta,
            repr(float(self.mean_mv)), repr(float(self.max_mv)),
        ])

    @staticmethod
    def from_csv_row(row: str) -> "MetricsRecord":
        parts = row.split(",")
        return MetricsRecord(
            iteration=int(parts[0]), psnr=float(parts[1]), ssim=float(parts[2]),
            n_p=int(parts[3]), n_a=int(parts[4]), n_d=int(parts[5]),
            delta_na=float(parts[6]) if parts[6] else None,
            mean_mv=float(parts[7]), max_mv=float(parts[8]),
        )


def psnr(render: np.ndarray, target: np.ndarray) -> float:
    """10 * log10(1 / MSE) for [0, 1] images, capped for identical pairs."""
    mse = float(np.mean((np.asarray(render) - np.asarray(target)) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def delta_n(value: float, baseline: float) -> float:
    """Normalized change versus a baseline count."""
    return (value - baseline) / baseline


def compute_metrics(pset: PrimitiveSet, targets, viewpoints, iteration: int = 0,
                    baseline_na: int = None, state: MomentState = None) -> MetricsRecord:
    """Render every viewpoint and aggregate quality and count metrics.

    PSNR/SSIM are the means of the per-viewpoint values; active/dead
    counts split alive primitives at opacity 1/255.
    """
    psnrs, ssims = [], []
    for target, vp in zip(targets, viewpoints):
        image, _, _ = render_forward(pset, vp)
        psnrs.append(psnr(image, target))
        ssims.append(1.0 - dssim(image, target)[0])
    n_a, n_d, _ = classify_active(pset)
    rec = MetricsRecord(
        iteration=iteration,
        psnr=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        n_p=len(pset),
        n_a=n_a,
        n_d=n_d,
    )
    if baseline_na is not None and baseline_na > 0:
        rec.delta_na = delta_n(n_a, baseline_na)
    if state is not None:
        tau_stats = moment_stats(state, pset.alive)["tau"]
        rec.mean_mv = tau_stats["mean_abs_m_over_sqrt_v"]
        rec.max_mv = tau_stats["max_abs_m_over_sqrt_v"]
    return rec
