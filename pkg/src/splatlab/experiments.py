"""Multi-arm experiment execution and output wiring."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .metrics import delta_n
from .outputs import write_arm_outputs, write_summary
from .pipeline import TrainingResult, run_training
from .presets import config_for, get_preset

__all__ = ["PresetRun", "run_experiment_preset", "run_arm", "worker_count"]


def worker_count() -> int:
    """Worker parallelism cap from LAB_THREADS (default: sequential)."""
    try:
        return max(1, int(os.environ.get("LAB_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class PresetRun:
    preset_name: str
    seed: int
    baseline_arm: str
    results: dict  # arm name -> TrainingResult

    def arm(self, name: str) -> TrainingResult:
        return self.results[name]


def run_arm(preset_name: str, arm_name: str, seed: int, overrides: dict = None,
            tap_moments: bool = False) -> TrainingResult:
    cfg = config_for(preset_name, arm_name, seed=seed, overrides=overrides)
    return run_training(cfg, tap_moments=tap_moments)


def _fill_deltas(run: PresetRun) -> None:
    """Per-iteration delta of active counts against the baseline arm."""
    base = run.results[run.baseline_arm]
    base_na = {rec.iteration: rec.n_a for rec in base.metrics}
    for result in run.results.values():
        for rec in result.metrics:
            ref = base_na.get(rec.iteration)
            if ref:
                rec.delta_na = delta_n(rec.n_a, ref)


def run_experiment_preset(name: str, seed: int = 0, overrides: dict = None,
                          arms=None, tap_moments: bool = False,
                          out_dir=None) -> PresetRun:
    """Run every arm of a preset on a shared seed and scene.

    Arms differ from each other only by their config deltas. When
    ``out_dir`` is given, per-arm outputs and a summary land there. Arms
    run in parallel processes when LAB_THREADS allows it.
    """
    preset = get_preset(name)
    arm_names = [a.name for a in preset.arms]
    if arms:
        missing = [a for a in arms if a not in arm_names]
        if missing:
            raise ValueError(f"unknown arms {missing}; preset has {arm_names}")
        arm_names = [a for a in arm_names if a in set(arms)]

    results = {}
    workers = min(worker_count(), len(arm_names))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                arm: pool.submit(run_arm, name, arm, seed, overrides, tap_moments)
                for arm in arm_names
            }
            results = {arm: fut.result() for arm, fut in futures.items()}
    else:
        for arm in arm_names:
            results[arm] = run_arm(name, arm, seed, overrides, tap_moments)

    baseline = preset.baseline if preset.baseline in results else arm_names[0]
    run = PresetRun(preset_name=name, seed=seed, baseline_arm=baseline, results=results)
    _fill_deltas(run)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for arm, result in results.items():
            write_arm_outputs(result, out / arm)
        write_summary(out, name, seed, baseline, results)
    return run
