"""Optimizer variants and state machinery for primitive attributes.

Five update modes over the same moment state:

* ``coupled-adam``    -- synchronous Adam; every primitive steps every
  iteration, so invisible primitives still receive "implicit updates"
  from their decaying moments.
* ``sparse-adam``     -- visibility-masked Adam; state, per-primitive
  clocks and parameters of invisible primitives stay frozen.
* ``adamw-const``     -- sparse Adam on decoupled (photometric-only)
  moments plus a constant regularization penalty.
* ``adamw-const-clip``-- same with the penalty clamped at C_t.
* ``adamw-gs``        -- sparse Adam on decoupled moments with the
  adaptive regularization term ``min(lambda * (dR/N_I') / (sqrt(v^)+eps),
  C_t)`` on opacity and scale; other attributes take the plain step.

Moment rescaling (``rsr_apply``), state-sampling schedules, artificial
implicit updates and opacity-gated position noise are separate operations
composed by the training pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gradients import ATTR_GROUPS, ParamGrads
from .primitives import PrimitiveSet, activate_opacity, activate_scale, opacity_derivative

__all__ = [
    "MODES",
    "ConfigError",
    "GradientError",
    "OptimizerConfig",
    "MomentState",
    "StSSchedule",
    "RsrConfig",
    "AiuConfig",
    "NoiseConfig",
    "round_pixel_count",
    "adam_step_sync",
    "sparse_adam_step",
    "dar_step",
    "adamw_const_step",
    "rsr_apply",
    "stss_sample",
    "aiu_apply",
    "noise_perturb",
    "reset_rows",
    "moment_stats",
]

MODES = ("coupled-adam", "sparse-adam", "adamw-const", "adamw-const-clip", "adamw-gs")


class ConfigError(ValueError):
    """Invalid optimizer configuration."""


class GradientError(RuntimeError):
    """A step was aborted because a gradient was not finite."""

    def __init__(self, ids):
        self.ids = np.asarray(ids)
        super().__init__(f"non-finite gradient on primitives {self.ids.tolist()[:16]}")


@dataclass
class OptimizerConfig:
    mode: str = "coupled-adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_mu: float = 0.029  # scaled by scene extent at config assembly
    lr_tau: float = 0.05
    lr_kappa: float = 5e-3
    lr_rot: float = 1e-3
    lr_color: float = 2.5e-3
    lambda_o: float = 0.0
    lambda_s: float = 0.0
    ct_opacity: float = 10.0
    ct_scale: float = 10.0
    round_n_pixels: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not (0.0 <= b < 1.0):
                raise ConfigError(f"{name} must lie in [0, 1)")
        if not (self.eps > 0.0):
            raise ConfigError("eps must be positive")
        if not (self.ct_opacity > 0.0 and self.ct_scale > 0.0):
            raise ConfigError("clip bounds C_t must be positive")

    def lr(self, attr: str) -> float:
        return getattr(self, f"lr_{attr}")


@dataclass
class MomentState:
    """First/second moments and per-primitive step clocks, per attribute.

    ``global_t`` counts synchronous steps: synchronous Adam bias-corrects
    with this single clock, while the sparse modes use the asynchronous
    per-primitive ``t``.
    """

    m: dict
    v: dict
    t: dict
    global_t: int = 0

    @staticmethod
    def zeros(n: int) -> "MomentState":
        shapes = {"mu": (n, 2), "kappa": (n, 2), "rot": (n,), "tau": (n,), "color": (n, 3)}
        return MomentState(
            m={a: np.zeros(shapes[a]) for a in ATTR_GROUPS},
            v={a: np.zeros(shapes[a]) for a in ATTR_GROUPS},
            t={a: np.zeros(n, dtype=np.int64) for a in ATTR_GROUPS},
        )

    @staticmethod
    def zeros_like(pset: PrimitiveSet) -> "MomentState":
        return MomentState.zeros(len(pset))

    def __len__(self) -> int:
        return len(self.t["tau"])

    def copy(self) -> "MomentState":
        return MomentState(
            m={a: arr.copy() for a, arr in self.m.items()},
            v={a: arr.copy() for a, arr in self.v.items()},
            t={a: arr.copy() for a, arr in self.t.items()},
            global_t=self.global_t,
        )

    def select(self, index) -> "MomentState":
        return MomentState(
            m={a: arr[index] for a, arr in self.m.items()},
            v={a: arr[index] for a, arr in self.v.items()},
            t={a: arr[index] for a, arr in self.t.items()},
            global_t=self.global_t,
        )

    @staticmethod
    def concatenate(a: "MomentState", b: "MomentState") -> "MomentState":
        return MomentState(
            m={k: np.concatenate([a.m[k], b.m[k]]) for k in a.m},
            v={k: np.concatenate([a.v[k], b.v[k]]) for k in a.v},
            t={k: np.concatenate([a.t[k], b.t[k]]) for k in a.t},
            global_t=a.global_t,
        )


def reset_rows(state: MomentState, indices) -> MomentState:
    """Fresh-primitive state on the given rows: m = v = 0, t = 0."""
    for attr in ATTR_GROUPS:
        state.m[attr][indices] = 0.0
        state.v[attr][indices] = 0.0
        state.t[attr][indices] = 0
    return state


def round_pixel_count(n_pixels: int, enabled: bool = True) -> float:
    """Keep the most significant digit of N_I, then divide by ten.

    1024 -> 1000 -> 100. Disabled, returns N_I unchanged.
    """
    if n_pixels <= 0:
        raise ConfigError("pixel count must be positive")
    if not enabled:
        return float(n_pixels)
    p = 10 ** math.floor(math.log10(n_pixels))
    return (n_pixels // p) * p / 10.0


def _check_grads(grads: ParamGrads) -> None:
    ids = grads.finite_check()
    if ids is not None:
        raise GradientError(ids)


def _corrected(state: MomentState, attr: str, rows, beta1: float, beta2: float,
               global_t: int = None):
    """Bias-corrected moments on the given rows.

    Uses the per-primitive asynchronous clock unless ``global_t`` is
    given (synchronous mode, one shared clock).
    """
    m = state.m[attr][rows]
    v = state.v[attr][rows]
    if global_t is not None:
        t = float(global_t)
    else:
        t = state.t[attr][rows].astype(np.float64)
        if m.ndim == 2:
            t = t[:, None]
    m_hat = m / (1.0 - np.power(beta1, t))
    v_hat = v / (1.0 - np.power(beta2, t))
    return m_hat, v_hat


def _update_rows(state: MomentState, pset: PrimitiveSet, grads: ParamGrads,
                 cfg: OptimizerConfig, rows, mu_lr_scale: float,
                 global_t: int = None) -> None:
    """Plain Adam on the selected rows, all attribute groups."""
    for attr in ATTR_GROUPS:
        g = grads[attr][rows]
        state.m[attr][rows] = cfg.beta1 * state.m[attr][rows] + (1.0 - cfg.beta1) * g
        state.v[attr][rows] = cfg.beta2 * state.v[attr][rows] + (1.0 - cfg.beta2) * (g * g)
        state.t[attr][rows] += 1
        m_hat, v_hat = _corrected(state, attr, rows, cfg.beta1, cfg.beta2, global_t)
        lr = cfg.lr(attr) * (mu_lr_scale if attr == "mu" else 1.0)
        arr = getattr(pset, attr)
        arr[rows] = arr[rows] - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def adam_step_sync(state: MomentState, pset: PrimitiveSet, grads: ParamGrads,
                   cfg: OptimizerConfig, mu_lr_scale: float = 1.0):
    """Synchronous Adam: every primitive steps, zero-gradient rows included."""
    _check_grads(grads)
    state.global_t += 1
    _update_rows(state, pset, grads, cfg, slice(None), mu_lr_scale, state.global_t)
    return pset, state


def sparse_adam_step(state: MomentState, pset: PrimitiveSet, grads: ParamGrads,
                     vis: np.ndarray, cfg: OptimizerConfig, mu_lr_scale: float = 1.0):
    """Visibility-masked Adam: invisible rows stay bitwise untouched."""
    _check_grads(grads)
    rows = np.flatnonzero(np.asarray(vis, dtype=bool))
    if rows.size:
        _update_rows(state, pset, grads, cfg, rows, mu_lr_scale)
    return pset, state


def _decoupled_reg_step(state, pset, grads, vis, cfg, mu_lr_scale,
                        extra_tau_fn, extra_kappa_fn):
    """Shared body of the decoupled modes: plain step plus add-on terms.

    ``extra_*_fn(rows, v_hat)`` return the regularization term already in
    update units; both must be elementwise bounded before return.
    """
    _check_grads(grads)
    rows = np.flatnonzero(np.asarray(vis, dtype=bool))
    if rows.size == 0:
        return pset, state
    for attr in ATTR_GROUPS:
        g = grads[attr][rows]
        state.m[attr][rows] = cfg.beta1 * state.m[attr][rows] + (1.0 - cfg.beta1) * g
        state.v[attr][rows] = cfg.beta2 * state.v[attr][rows] + (1.0 - cfg.beta2) * (g * g)
        state.t[attr][rows] += 1
        m_hat, v_hat = _corrected(state, attr, rows, cfg.beta1, cfg.beta2)
        step = m_hat / (np.sqrt(v_hat) + cfg.eps)
        if attr == "tau" and extra_tau_fn is not None:
            step = step + extra_tau_fn(rows, v_hat)
        elif attr == "kappa" and extra_kappa_fn is not None:
            step = step + extra_kappa_fn(rows, v_hat)
        lr = cfg.lr(attr) * (mu_lr_scale if attr == "mu" else 1.0)
        arr = getattr(pset, attr)
        arr[rows] = arr[rows] - lr * step
    return pset, state


def dar_step(state: MomentState, pset: PrimitiveSet, grads: ParamGrads,
             vis: np.ndarray, cfg: OptimizerConfig, n_pixels: int,
             mu_lr_scale: float = 1.0, lambda_o: float = None, lambda_s: float = None):
    """Decoupled attribute regularization on top of sparse Adam.

    ``grads`` must carry only photometric gradients; the moments stay
    clean of regularization. The opacity/scale add-on is
    ``min(lambda * (dR / N_I') / (sqrt(v^) + eps), C_t)``, nonnegative
    because both activations have positive derivative.
    """
    lo = cfg.lambda_o if lambda_o is None else lambda_o
    ls = cfg.lambda_s if lambda_s is None else lambda_s
    if cfg.ct_opacity <= 0.0 or cfg.ct_scale <= 0.0:
        raise ConfigError("clip bounds C_t must be positive")
    n_i = round_pixel_count(n_pixels, cfg.round_n_pixels)

    def extra_tau(rows, v_hat):
        if lo == 0.0:
            return 0.0
        reg = opacity_derivative(pset.tau[rows]) / n_i
        return np.minimum(lo * reg / (np.sqrt(v_hat) + cfg.eps), cfg.ct_opacity)

    def extra_kappa(rows, v_hat):
        if ls == 0.0:
            return 0.0
        reg = np.asarray(activate_scale(pset.kappa[rows])) / n_i
        return np.minimum(ls * reg / (np.sqrt(v_hat) + cfg.eps), cfg.ct_scale)

    return _decoupled_reg_step(state, pset, grads, vis, cfg, mu_lr_scale,
                               extra_tau, extra_kappa)


def adamw_const_step(state: MomentState, pset: PrimitiveSet, grads: ParamGrads,
                     vis: np.ndarray, cfg: OptimizerConfig,
                     clip: float = None, mu_lr_scale: float = 1.0):
    """AdamW-style decoupling: constant penalty ``lambda * dR(theta)``.

    Every visible primitive receives the same-strength pressure on its
    activation derivative, irrespective of its importance; ``clip``
    optionally clamps the penalty at C_t.
    """

    def extra_tau(rows, v_hat):
        if cfg.lambda_o == 0.0:
            return 0.0
        term = cfg.lambda_o * opacity_derivative(pset.tau[rows])
        return np.minimum(term, clip) if clip is not None else term

    def extra_kappa(rows, v_hat):
        if cfg.lambda_s == 0.0:
            return 0.0
        term = cfg.lambda_s * np.asarray(activate_scale(pset.kappa[rows]))
        return np.minimum(term, clip) if clip is not None else term

    return _decoupled_reg_step(state, pset, grads, vis, cfg, mu_lr_scale,
                               extra_tau, extra_kappa)


def rsr_apply(state: MomentState, indices, alpha1: float, alpha2: float) -> MomentState:
    """Re-state regularization: attenuate moments, keep the clock.

    ``m <- alpha1 * m`` and ``v <- alpha2 * v`` on the selected rows;
    with ``alpha2 = alpha1**2`` the update magnitude ``m / sqrt(v)`` is
    preserved while the second moment shrinks enough to reactivate
    adaptive regularization.
    """
    if not (0.0 <= alpha1 < 1.0 and 0.0 <= alpha2 < 1.0):
        raise ConfigError("RSR factors must lie in [0, 1)")
    for attr in ATTR_GROUPS:
        state.m[attr][indices] *= alpha1
        state.v[attr][indices] *= alpha2
    return state


@dataclass(frozen=True)
class StSSchedule:
    """Milestone-style sampling ratios; ratio 0 before the first milestone."""

    milestones: tuple = ()  # ((iteration, ratio), ...)
    interval: int = 10

    def __post_init__(self):
        iters = [it for it, _ in self.milestones]
        if any(b <= a for a, b in zip(iters, iters[1:])):
            raise ConfigError("milestones must be strictly increasing")
        if any(not (0.0 <= r <= 1.0) for _, r in self.milestones):
            raise ConfigError("sampling ratios must lie in [0, 1]")
        if self.interval < 1:
            raise ConfigError("interval must be >= 1")

    def ratio_at(self, iteration: int) -> float:
        out = 0.0
        for it, ratio in self.milestones:
            if iteration >= it:
                out = ratio
        return out


@dataclass(frozen=True)
class RsrConfig:
    alpha1: float = 0.2
    alpha2: float = 0.04
    schedule: StSSchedule = field(default_factory=StSSchedule)
    enabled: bool = False

    def __post_init__(self):
        if not (0.0 <= self.alpha1 < 1.0 and 0.0 <= self.alpha2 < 1.0):
            raise ConfigError("RSR factors must lie in [0, 1)")


def stss_sample(schedule: StSSchedule, iteration: int, n_p: int,
                rng: np.random.Generator) -> np.ndarray:
    """Uniformly sample ``floor(ratio * N_p)`` distinct primitive rows."""
    ratio = schedule.ratio_at(iteration)
    k = int(math.floor(ratio * n_p))
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(rng.choice(n_p, size=k, replace=False).astype(np.int64))


@dataclass(frozen=True)
class AiuConfig:
    """Artificial implicit updates for sampled invisible primitives."""

    start: int = 0
    end: int = -1  # inclusive; -1 disables
    prob_schedule: tuple = ()  # ((iteration, probability), ...)
    eta_schedule: tuple = ()  # ((iteration, step scale), ...)
    enabled: bool = False

    def __post_init__(self):
        for sched in (self.prob_schedule, self.eta_schedule):
            iters = [it for it, _ in sched]
            if any(b <= a for a, b in zip(iters, iters[1:])):
                raise ConfigError("schedule milestones must be strictly increasing")
        if any(not (0.0 <= p <= 1.0) for _, p in self.prob_schedule):
            raise ConfigError("sampling probabilities must lie in [0, 1]")

    def active(self, iteration: int) -> bool:
        return self.enabled and self.start <= iteration <= self.end

    @staticmethod
    def _at(schedule, iteration: int) -> float:
        out = 0.0
        for it, val in schedule:
            if iteration >= it:
                out = val
        return out

    def prob_at(self, iteration: int) -> float:
        return self._at(self.prob_schedule, iteration)

    def eta_at(self, iteration: int) -> float:
        return self._at(self.eta_schedule, iteration)


def aiu_apply(state: MomentState, pset: PrimitiveSet, vis: np.ndarray,
              cfg: OptimizerConfig, aiu: AiuConfig, rng: np.random.Generator,
              iteration: int) -> np.ndarray:
    """Extra updates for a random subset of invisible primitives.

    Uses the frozen moments and clocks; neither m, v nor t is modified.
    Returns the sampled row indices.
    """
    if not aiu.active(iteration):
        return np.empty(0, dtype=np.int64)
    prob = aiu.prob_at(iteration)
    eta = aiu.eta_at(iteration)
    invisible = np.flatnonzero(pset.alive & ~np.asarray(vis, dtype=bool))
    if invisible.size == 0 or prob <= 0.0 or eta == 0.0:
        return np.empty(0, dtype=np.int64)
    picked = invisible[rng.random(invisible.size) < prob]
    if picked.size == 0:
        return picked
    for attr in ATTR_GROUPS:
        started = picked[state.t[attr][picked] > 0]
        if started.size == 0:
            continue
        m_hat, v_hat = _corrected(state, attr, started, cfg.beta1, cfg.beta2)
        arr = getattr(pset, attr)
        arr[started] = arr[started] - cfg.lr(attr) * eta * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return picked


@dataclass(frozen=True)
class NoiseConfig:
    """Opacity-gated position noise, shaped by the primitive covariance."""

    enabled: bool = False
    lambda_mu: float = 100.0  # gate sharpness
    lambda_t: float = 0.005  # gate center opacity
    eta_ratio: float = 1.0  # eta_Ro / eta_mu


def noise_perturb(pset: PrimitiveSet, state: MomentState, lr_position: float,
                  cfg: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    """Position perturbations ``-eta_Ro * eta_mu * gate(o) * Sigma @ gamma``.

    The gate ``sigma(-lambda_mu * (o - lambda_t))`` saturates to zero for
    solid primitives, so only near-dead primitives wander. Returns the
    additive (N, 2) perturbation; rows that are not alive get zero.
    """
    n = len(pset)
    gamma = rng.standard_normal((n, 2))
    o = pset.opacity()
    gate = np.asarray(activate_opacity(-cfg.lambda_mu * (o - cfg.lambda_t)))
    sq = np.exp(2.0 * pset.kappa)
    c, s = np.cos(pset.rot), np.sin(pset.rot)
    sxx = c * c * sq[:, 0] + s * s * sq[:, 1]
    syy = s * s * sq[:, 0] + c * c * sq[:, 1]
    sxy = c * s * (sq[:, 0] - sq[:, 1])
    shaped = np.stack([
        sxx * gamma[:, 0] + sxy * gamma[:, 1],
        sxy * gamma[:, 0] + syy * gamma[:, 1],
    ], axis=1)
    delta = -cfg.eta_ratio * lr_position * gate[:, None] * shaped
    delta[~pset.alive] = 0.0
    return delta


def moment_stats(state: MomentState, alive: np.ndarray) -> dict:
    """Per-attribute mean/max of sqrt(v) and |m/sqrt(v)| over alive rows."""
    out = {}
    for attr in ATTR_GROUPS:
        v = state.v[attr][alive]
        m = state.m[attr][alive]
        v = v.reshape(-1)
        m = m.reshape(-1)
        sq = np.sqrt(v)
        pos = sq > 0.0
        ratio = np.abs(m[pos]) / sq[pos]
        out[attr] = {
            "mean_sqrt_v": float(sq.mean()) if sq.size else 0.0,
            "max_sqrt_v": float(sq.max()) if sq.size else 0.0,
            "mean_abs_m_over_sqrt_v": float(ratio.mean()) if ratio.size else 0.0,
            "max_abs_m_over_sqrt_v": float(ratio.max()) if ratio.size else 0.0,
        }
    return out
