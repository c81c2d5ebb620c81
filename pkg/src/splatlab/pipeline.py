"""Training orchestration: stages, density control, relocation.

An iteration renders one viewpoint, backpropagates the photometric loss,
dispatches to the configured optimizer mode, and then runs whatever
structural events fall on the boundary: clone/split/prune (vanilla),
dead-primitive relocation (MCMC), opacity reset, and moment rescaling on
the sampled schedule. Every structural event keeps the moment state
row-aligned with the primitive set and is recorded in an event log.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .config import DensifyConfig, ExperimentConfig, StagePlan
from .gradients import ParamGrads
from .loss import coupled_reg_grad, photometric_loss, regularization_value
from .metrics import MetricsRecord, compute_metrics
from .optimizer import (
    MomentState,
    adam_step_sync,
    adamw_const_step,
    aiu_apply,
    dar_step,
    moment_stats,
    noise_perturb,
    reset_rows,
    rsr_apply,
    sparse_adam_step,
    stss_sample,
)
from .primitives import ACTIVE_OPACITY_THRESHOLD, PrimitiveSet, inverse_opacity
from .renderer import render_backward, render_forward
from .rng import RngHub
from .scene import gen_scene

__all__ = [
    "DensifyStats",
    "PipelineError",
    "SceneCollapseError",
    "TrainingDiverged",
    "TrainingResult",
    "densify_adc",
    "opacity_reset",
    "mcmc_relocate",
    "run_training",
]


class PipelineError(RuntimeError):
    """Internal contract violation (row misalignment, bad stage op)."""


class SceneCollapseError(RuntimeError):
    """Relocation has no alive primitives left to respawn from."""


class TrainingDiverged(RuntimeError):
    def __init__(self, diagnostic: dict):
        self.diagnostic = diagnostic
        super().__init__(f"non-finite loss at iteration {diagnostic.get('iteration')}")


@dataclass
class DensifyStats:
    """Accumulated view-space positional gradient statistics."""

    accum: np.ndarray
    count: np.ndarray

    @staticmethod
    def zeros(n: int) -> "DensifyStats":
        return DensifyStats(accum=np.zeros(n), count=np.zeros(n, dtype=np.int64))

    def observe(self, grad_mu: np.ndarray, vis: np.ndarray, view_scale: float) -> None:
        rows = np.flatnonzero(vis)
        if rows.size:
            norms = np.linalg.norm(grad_mu[rows], axis=1) * view_scale
            self.accum[rows] += norms
            self.count[rows] += 1

    def mean(self) -> np.ndarray:
        return self.accum / np.maximum(self.count, 1)

    def reset(self, n: int = None) -> None:
        n = len(self.accum) if n is None else n
        self.accum = np.zeros(n)
        self.count = np.zeros(n, dtype=np.int64)


def _ids_hash(ids) -> str:
    data = np.sort(np.asarray(ids, dtype=np.int64)).tobytes()
    return hashlib.blake2b(data, digest_size=8).hexdigest()


def _event(iteration: int, kind: str, ids) -> dict:
    ids = np.asarray(ids)
    return {"iter": int(iteration), "kind": kind, "count": int(ids.size),
            "affected_ids_hash": _ids_hash(ids)}


def _audit(pset: PrimitiveSet, state: MomentState, stats: DensifyStats = None) -> None:
    if len(state) != len(pset):
        raise PipelineError(f"state rows {len(state)} != primitive rows {len(pset)}")
    if stats is not None and len(stats.accum) != len(pset):
        raise PipelineError("densify stats misaligned with primitive set")


def _clone_opacity(o: np.ndarray, layers: np.ndarray = None) -> np.ndarray:
    """Blend-preserving opacity for stacked copies: (1-o')^k = 1-o."""
    k = 2.0 if layers is None else np.asarray(layers, dtype=np.float64)
    return 1.0 - np.power(1.0 - o, 1.0 / k)


def densify_adc(pset: PrimitiveSet, state: MomentState, stats: DensifyStats,
                cfg: DensifyConfig, rng: np.random.Generator, iteration: int = 0):
    """Vanilla adaptive density control: clone, split, then prune.

    High-gradient primitives are cloned (small ones) or split in two with
    scales shrunk by ``split_shrink`` (large ones); cloning applies the
    blend-preserving opacity correction to parent and child. Low-opacity
    primitives are pruned afterwards. New rows start with fresh optimizer
    state; statistics reset after the event.
    """
    events = []
    mean_grad = stats.mean()
    scale_max = np.exp(pset.kappa).max(axis=1)
    hot = pset.alive & (mean_grad > cfg.grad_threshold) & (stats.count > 0)
    clone_rows = np.flatnonzero(hot & (scale_max <= cfg.split_scale_px))
    split_rows = np.flatnonzero(hot & (scale_max > cfg.split_scale_px))

    n_new = clone_rows.size + 2 * split_rows.size
    if n_new and len(pset) + n_new - split_rows.size > cfg.max_primitives:
        events.append(_event(iteration, "densify_skip", np.concatenate([clone_rows, split_rows])))
        clone_rows = split_rows = np.empty(0, dtype=np.int64)

    pieces = [pset]
    state_pieces = [state]
    if clone_rows.size:
        child = pset.select(clone_rows)
        o_corr = _clone_opacity(np.asarray(child.opacity()))
        child.tau[:] = inverse_opacity(o_corr)
        pset.tau[clone_rows] = child.tau
        pieces.append(child)
        state_pieces.append(MomentState.zeros(len(child)))
        events.append(_event(iteration, "clone", clone_rows))
    if split_rows.size:
        for _ in range(2):
            child = pset.select(split_rows)
            # sample child positions inside the parent footprint
            gamma = rng.standard_normal((len(child), 2))
            norms = np.linalg.norm(gamma, axis=1)
            gamma *= (np.minimum(norms, 2.5) / np.maximum(norms, 1e-12))[:, None]
            s = np.exp(child.kappa)
            c, sn = np.cos(child.rot), np.sin(child.rot)
            local = s * gamma  # stretch along principal axes
            child.mu[:, 0] += c * local[:, 0] - sn * local[:, 1]
            child.mu[:, 1] += sn * local[:, 0] + c * local[:, 1]
            child.kappa -= np.log(cfg.split_shrink)
            pieces.append(child)
            state_pieces.append(MomentState.zeros(len(child)))
        events.append(_event(iteration, "split", split_rows))

    merged = pieces[0]
    merged_state = state_pieces[0]
    for piece, spiece in zip(pieces[1:], state_pieces[1:]):
        merged = PrimitiveSet.concatenate(merged, piece)
        merged_state = MomentState.concatenate(merged_state, spiece)

    # split parents are replaced by their children; prune low opacity
    keep = np.ones(len(merged), dtype=bool)
    keep[split_rows] = False
    prune = merged.alive & (np.asarray(merged.opacity()) <= cfg.prune_opacity)
    pruned_ids = np.flatnonzero(prune & keep)
    keep &= ~prune
    if pruned_ids.size:
        events.append(_event(iteration, "prune", pruned_ids))

    out = merged.select(keep)
    out_state = merged_state.select(keep)
    stats.reset(len(out))
    _audit(out, out_state, stats)
    return out, out_state, events


def opacity_reset(pset: PrimitiveSet, floor: float) -> PrimitiveSet:
    """Lower every live opacity to at most ``floor`` (in place)."""
    cap = inverse_opacity(floor)
    rows = pset.alive & (pset.tau > cap)
    pset.tau[rows] = cap
    return pset


def mcmc_relocate(pset: PrimitiveSet, state: MomentState, rng: np.random.Generator,
                  iteration: int = 0):
    """Respawn dead primitives at opacity-sampled alive primitives.

    Each dead row copies its target's geometry and color; the target and
    its respawns share the blend-preserving opacity
    ``1 - (1 - o)^(1/(k+1))`` so the local blend is approximately kept.
    Respawned rows get fresh optimizer state; N_p never changes.
    """
    opacity = np.asarray(pset.opacity())
    dead = np.flatnonzero(pset.alive & (opacity <= ACTIVE_OPACITY_THRESHOLD))
    live = np.flatnonzero(pset.alive & (opacity > ACTIVE_OPACITY_THRESHOLD))
    if live.size == 0:
        raise SceneCollapseError("no alive primitives to relocate onto")
    if dead.size == 0:
        return pset, state, []

    n_before = len(pset)
    probs = opacity[live] / opacity[live].sum()
    targets = live[rng.choice(live.size, size=dead.size, p=probs)]

    uniq, inverse, counts = np.unique(targets, return_inverse=True, return_counts=True)
    o_new_uniq = _clone_opacity(opacity[uniq], layers=counts + 1.0)
    tau_new_uniq = np.asarray(inverse_opacity(o_new_uniq))

    pset.mu[dead] = pset.mu[targets]
    pset.kappa[dead] = pset.kappa[targets]
    pset.rot[dead] = pset.rot[targets]
    pset.color[dead] = pset.color[targets]
    pset.depth[dead] = pset.depth[targets]
    pset.tau[dead] = tau_new_uniq[inverse]
    pset.tau[uniq] = tau_new_uniq
    reset_rows(state, dead)

    if len(pset) != n_before:
        raise PipelineError("relocation must keep N_p constant")
    return pset, state, [_event(iteration, "relocate", dead)]


@dataclass
class TrainingResult:
    config: ExperimentConfig
    pset: PrimitiveSet
    state: MomentState
    metrics: list
    events: list
    moment_rows: list
    gt: PrimitiveSet
    targets: list
    viewpoints: list
    relocated_total: int = 0
    renderer_skips: int = 0
    loss_trace: list = field(default_factory=list)

    def final_metrics(self) -> MetricsRecord:
        return self.metrics[-1]

    def events_of(self, kind: str) -> list:
        return [e for e in self.events if e["kind"] == kind]


def run_training(config: ExperimentConfig, tap_moments: bool = False) -> TrainingResult:
    """Run one experiment arm to completion, deterministically in the seed."""
    hub = RngHub(config.run.seed)
    gt, targets, pset, viewpoints = gen_scene(config.scene, hub)
    state = MomentState.zeros_like(pset)
    stats = DensifyStats.zeros(len(pset))

    plan: StagePlan = config.stages
    ocfg = config.optimizer
    dcfg = config.densify
    n_views = len(viewpoints)
    view_scale = 0.5 * config.scene.crop_size
    metrics, events, moment_rows, loss_trace = [], [], [], []
    relocated_total = 0
    renderer_skips = 0
    perm = None

    def record_metrics(iteration):
        rec = compute_metrics(pset, targets, viewpoints, iteration=iteration, state=state)
        metrics.append(rec)
        if tap_moments:
            for attr, row in moment_stats(state, pset.alive).items():
                moment_rows.append({"iter": iteration, "attr": attr, **row})

    for it in range(plan.total_iters):
        if it % n_views == 0:
            perm = hub.stream("view-order", it // n_views).permutation(n_views)
        vi = int(perm[it % n_views])
        vp = viewpoints[vi]

        image, record, vis = render_forward(pset, vp)
        renderer_skips += record.n_skipped
        loss_val, dl_dc = photometric_loss(image, targets[vi], config.run.lambda1)
        if not np.isfinite(loss_val):
            raise TrainingDiverged({
                "iteration": it, "viewpoint": vi, "loss": float(loss_val),
                "n_p": len(pset), "reg": regularization_value(pset, ocfg.lambda_o, ocfg.lambda_s),
                "max_abs_tau": float(np.abs(pset.tau).max()),
                "max_abs_kappa": float(np.abs(pset.kappa).max()),
            })
        grads = render_backward(record, pset, vp, dl_dc)

        mode = plan.mode_at(it, ocfg.mode)
        mu_scale = config.run.mu_lr_final_ratio ** (it / max(plan.total_iters, 1))
        stage = plan.stage(it)
        in_densify = stage == "densify"

        if mode == "coupled-adam":
            g_tau, g_kappa = coupled_reg_grad(pset, vis, ocfg.lambda_o, ocfg.lambda_s,
                                              apply_to_all=True)
            grads.tau += g_tau
            grads.kappa += g_kappa
            adam_step_sync(state, pset, grads, ocfg, mu_scale)
        elif mode == "sparse-adam":
            g_tau, g_kappa = coupled_reg_grad(pset, vis, ocfg.lambda_o, ocfg.lambda_s)
            grads.tau += g_tau
            grads.kappa += g_kappa
            sparse_adam_step(state, pset, grads, vis, ocfg, mu_scale)
        elif mode == "adamw-gs":
            lo = ocfg.lambda_o if (in_densify and it >= config.run.dar_opacity_start) else 0.0
            ls = ocfg.lambda_s if in_densify else 0.0
            dar_step(state, pset, grads, vis, ocfg, vp.n_pixels, mu_scale,
                     lambda_o=lo, lambda_s=ls)
        elif mode == "adamw-const":
            adamw_const_step(state, pset, grads, vis, ocfg, clip=None, mu_lr_scale=mu_scale)
        elif mode == "adamw-const-clip":
            adamw_const_step(state, pset, grads, vis, ocfg, clip=ocfg.ct_opacity,
                             mu_lr_scale=mu_scale)
        else:
            raise PipelineError(f"unhandled optimizer mode {mode!r}")

        if config.aiu.enabled and config.aiu.active(it):
            picked = aiu_apply(state, pset, vis, ocfg, config.aiu, hub.stream("aiu", it), it)
            if picked.size:
                events.append(_event(it + 1, "aiu", picked))

        if config.noise.enabled:
            pset.mu += noise_perturb(pset, state, ocfg.lr_mu * mu_scale, config.noise,
                                     hub.stream("noise", it))

        if not dcfg.relocation:
            stats.observe(grads.mu, vis, view_scale)

        # structural events fire on boundaries inside the densification stage
        boundary = it + 1
        in_window = plan.warmup_end < boundary <= plan.densify_end
        if in_window and boundary % plan.densify_interval == 0:
            if dcfg.relocation:
                pset, state, evs = mcmc_relocate(pset, state, hub.stream("relocate", boundary),
                                                 iteration=boundary)
                relocated_total += sum(e["count"] for e in evs)
                events.extend(evs)
            else:
                pset, state, evs = densify_adc(pset, state, stats, dcfg,
                                               hub.stream("densify", boundary),
                                               iteration=boundary)
                events.extend(evs)
            _audit(pset, state)
        # resets stay strictly inside densification so the stage's tail
        # can regrow opacities before structural changes stop
        if (plan.warmup_end < boundary < plan.densify_end and not dcfg.relocation
                and dcfg.opacity_reset and boundary % plan.reset_interval == 0):
            opacity_reset(pset, dcfg.reset_floor)
            if dcfg.reset_clears_tau_state:
                state.m["tau"][:] = 0.0
                state.v["tau"][:] = 0.0
            events.append(_event(boundary, "opacity_reset", np.arange(len(pset))))
        if config.rsr.enabled and in_window and boundary % config.rsr.schedule.interval == 0:
            picked = stss_sample(config.rsr.schedule, boundary, len(pset),
                                 hub.stream("stss", boundary))
            if picked.size:
                rsr_apply(state, picked, config.rsr.alpha1, config.rsr.alpha2)
                events.append(_event(boundary, "rsr", picked))

        loss_trace.append(float(loss_val))
        if boundary % config.run.metrics_interval == 0 or boundary == plan.total_iters:
            record_metrics(boundary)

    return TrainingResult(
        config=config, pset=pset, state=state, metrics=metrics, events=events,
        moment_rows=moment_rows, gt=gt, targets=targets, viewpoints=viewpoints,
        relocated_total=relocated_total, renderer_skips=renderer_skips,
        loss_trace=loss_trace,
    )
