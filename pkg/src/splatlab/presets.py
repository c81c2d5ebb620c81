"""Experiment presets mirroring the optimizer ablation grid.

Each preset is a set of config deltas over the shared defaults. The
``gs-*`` family runs the vanilla pipeline (clone/split/prune with
opacity reset); the ``mc-*`` family runs the relocation pipeline with a
fixed primitive budget, coupled L1 regularization and position noise.
Scene analog of the indoor/outdoor split: few-primitive scenes want the
"lo" sampling schedule, many-primitive scenes the "hi" one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import ExperimentConfig, default_config
from .optimizer import ConfigError

__all__ = ["Arm", "Preset", "PRESETS", "STANDARD_SCENE", "get_preset",
           "preset_names", "config_for"]

# StSS milestone strings at desk scale: interval 10, densification [50, 1500).
STSS_LO = "0:0.05"
STSS_HI = "0:0.05,775:0.25"

# The standard redundant scene used by the acceptance experiments: shared
# across every arm of a comparison, so arm config diffs stay minimal. The
# ground truth is dense enough that a capped model stays underfit, which
# is the regime where the optimization phenomena under study live.
STANDARD_SCENE = {
    "scene.gt_count": 250,
    "scene.redundancy": 2.0,
    "scene.crop_size": 48,
    "scene.crops_x": 4,
    "scene.crops_y": 4,
    "densify.max_primitives": 1200,
    "densify.grad_threshold": 0.010,
    "stages.densify_end": 1000,
    "stages.reset_interval": 240,
    "optimizer.lr_tau": 0.1,
}

_DAR = {
    "optimizer.mode": "adamw-gs",
    "optimizer.lambda_o": 0.001,
    "optimizer.lambda_s": 1e-5,
}

_RSR_LO = {"rsr.enabled": True, "rsr.milestones": STSS_LO, "rsr.interval": 10}
_RSR_HI = {"rsr.enabled": True, "rsr.milestones": STSS_HI, "rsr.interval": 10}

_MC_BASE = {
    "optimizer.lambda_o": 0.01,
    "optimizer.lambda_s": 0.01,
    "densify.relocation": True,
    "densify.opacity_reset": False,
    "noise.enabled": True,
}


@dataclass(frozen=True)
class Arm:
    name: str
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    base: dict = field(default_factory=dict)
    arms: tuple = (Arm("main"),)
    baseline_arm: str = ""  # defaults to the first arm
    family_baseline: str = ""  # preset whose config is the ablation reference

    def arm(self, name: str) -> Arm:
        for arm in self.arms:
            if arm.name == name:
                return arm
        raise ConfigError(f"preset {self.name!r} has no arm {name!r}; "
                          f"available: {[a.name for a in self.arms]}")

    @property
    def baseline(self) -> str:
        return self.baseline_arm or self.arms[0].name


PRESETS = {p.name: p for p in (
    Preset(
        name="gs-adam",
        description="Vanilla pipeline, synchronous Adam everywhere (GS1 analog).",
        arms=(Arm("adam"),),
    ),
    Preset(
        name="gs-sparse",
        description="Vanilla pipeline with Sparse Adam (GS2 analog).",
        arms=(Arm("sparse", {"optimizer.mode": "sparse-adam"}),),
        family_baseline="gs-adam",
    ),
    Preset(
        name="gs-half",
        description="Adam during densification, Sparse Adam in pure optimization (GS3 analog).",
        arms=(Arm("half", {"stages.mode_pop": "sparse-adam"}),),
        family_baseline="gs-adam",
    ),
    Preset(
        name="gs-rsr-only",
        description="Sparse Adam plus moment rescaling only, no attribute regularization (GS0 analog).",
        arms=(Arm("rsr", {"optimizer.mode": "sparse-adam", **_RSR_LO}),),
        family_baseline="gs-adam",
    ),
    Preset(
        name="gs-adamwgs",
        description="Full recoupled optimizer on the vanilla pipeline: sparse + decoupled "
                    "moments + adaptive regularization + moment rescaling + noise "
                    "(GS8 analog; the no-reset arm is the GS7 analog).",
        base={**_DAR, **_RSR_HI, "noise.enabled": True},
        arms=(
            Arm("gs8"),
            Arm("gs7", {"densify.opacity_reset": False}),
        ),
        family_baseline="gs-adam",
    ),
    Preset(
        name="mc-adam",
        description="Relocation pipeline, synchronous Adam, coupled L1 regularization (MC1 analog).",
        base=_MC_BASE,
        arms=(Arm("adam"),),
    ),
    Preset(
        name="mc-sparse",
        description="Relocation pipeline with Sparse Adam, coupled L1 (MC2 analog).",
        base={**_MC_BASE, "optimizer.mode": "sparse-adam"},
        arms=(Arm("sparse"),),
        family_baseline="mc-adam",
    ),
    Preset(
        name="mc-aiu",
        description="Sparse + artificial implicit updates, with and without moment "
                    "rescaling (MC3/MC4 analogs).",
        base={**_MC_BASE, "optimizer.mode": "sparse-adam",
              "aiu.enabled": True, "aiu.prob": "0:0.1", "aiu.eta": "0:0.1"},
        arms=(
            Arm("aiu", {"aiu.start": 10, "aiu.end": 3000}),
            Arm("aiu-rsr", {"aiu.start": 300, "aiu.end": 3000, **_RSR_LO}),
        ),
        family_baseline="mc-sparse",
    ),
    Preset(
        name="mc-rsr-l1",
        description="Moment rescaling on top of coupled L1 regularization at low/high "
                    "sampling ratios (MC19/MC20 analogs).",
        base={**_MC_BASE, "optimizer.mode": "sparse-adam"},
        arms=(
            Arm("lo", _RSR_LO),
            Arm("hi", _RSR_HI),
        ),
        family_baseline="mc-sparse",
    ),
    Preset(
        name="mc-adamwgs",
        description="Full recoupled optimizer on the relocation pipeline at low/high "
                    "sampling ratios (MC17/MC8 analogs).",
        base={**_MC_BASE, **_DAR},
        arms=(
            Arm("lo", _RSR_LO),
            Arm("hi", _RSR_HI),
        ),
        family_baseline="mc-sparse",
    ),
)}


def preset_names() -> list:
    return sorted(PRESETS)


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {preset_names()}") from None


def config_for(preset_name: str, arm_name: str = None, seed: int = 0,
               overrides: dict = None) -> ExperimentConfig:
    """Assemble the config of one arm: defaults + preset + arm + overrides."""
    preset = get_preset(preset_name)
    arm = preset.arm(arm_name) if arm_name else preset.arms[0]
    cfg = default_config()
    merged = dict(preset.base)
    merged.update(arm.overrides)
    if overrides:
        merged.update(overrides)
    return cfg.with_overrides(merged).with_seed(seed)
