"""FastAPI service wrapping the experiment harness.

Runs are long (seconds to minutes): POST /runs either blocks until the
result is ready (``wait=true``, the CLI default) or returns a job record
to poll via GET /runs/{job_id}.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import read_config_file
from ..experiments import run_arm, run_experiment_preset
from ..optimizer import ConfigError
from ..outputs import MOMENTS_HEADER, compare_dirs, write_arm_outputs
from ..pipeline import TrainingDiverged
from ..presets import PRESETS, get_preset
from .jobs import JobStore
from .models import (
    ArmInfo,
    ArmResult,
    CompareRequest,
    CompareResponse,
    CompareRow,
    HealthResponse,
    JobInfo,
    MetricsRow,
    PresetInfo,
    RunRequest,
    RunResult,
    TraceRequest,
    TraceResponse,
)


def _metrics_row(rec) -> MetricsRow:
    return MetricsRow(
        iter=rec.iteration, psnr=rec.psnr, ssim=rec.ssim, np=rec.n_p,
        na=rec.n_a, nd=rec.n_d, delta_na=rec.delta_na,
        mean_mv=rec.mean_mv, max_mv=rec.max_mv,
    )


def _merged_overrides(scene_file, overrides) -> dict:
    merged = {}
    if scene_file:
        merged.update(read_config_file(scene_file))
    merged.update(overrides or {})
    return merged


def _execute_run(req: RunRequest) -> RunResult:
    overrides = _merged_overrides(req.scene_file, req.overrides)
    run = run_experiment_preset(
        req.preset, seed=req.seed, overrides=overrides or None,
        arms=req.arms, tap_moments=req.tap_moments, out_dir=req.out_dir,
    )
    arms = {}
    for name, result in run.results.items():
        arms[name] = ArmResult(
            name=name,
            final=_metrics_row(result.final_metrics()),
            relocated_total=result.relocated_total,
            dir=str(Path(req.out_dir) / name) if req.out_dir else None,
        )
    return RunResult(
        preset=req.preset, seed=req.seed, baseline_arm=run.baseline_arm, arms=arms,
        out_dir=req.out_dir,
        summary_path=str(Path(req.out_dir) / "summary.json") if req.out_dir else None,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="splatlab", version=__version__,
                  description="2D Gaussian splatting optimizer lab")
    jobs = JobStore()

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(version=__version__)

    @app.get("/presets", response_model=list[PresetInfo])
    def list_presets():
        return [_preset_info(p) for _, p in sorted(PRESETS.items())]

    @app.get("/presets/{name}", response_model=PresetInfo)
    def preset_detail(name: str):
        try:
            return _preset_info(get_preset(name))
        except ConfigError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.post("/runs", response_model=JobInfo)
    def start_run(req: RunRequest):
        try:
            get_preset(req.preset)
        except ConfigError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        job = jobs.create(req)
        if req.wait:
            job.status = "running"
            try:
                job.result = _execute_run(req)
                job.status = "done"
            except (ConfigError, ValueError) as exc:
                job.status = "error"
                job.error = str(exc)
                raise HTTPException(status_code=400, detail=str(exc))
            except TrainingDiverged as exc:
                job.status = "error"
                job.error = str(exc)
                raise HTTPException(status_code=422, detail=str(exc))
            return job
        jobs.start(job, _execute_run)
        return job

    @app.get("/runs", response_model=list[JobInfo])
    def list_runs():
        return jobs.all()

    @app.get("/runs/{job_id}", response_model=JobInfo)
    def run_status(job_id: str):
        try:
            return jobs.get(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no job {job_id!r}")

    @app.post("/compare", response_model=CompareResponse)
    def compare(req: CompareRequest):
        try:
            comp = compare_dirs(req.dirs)
        except (FileNotFoundError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return CompareResponse(anchor=comp["anchor"],
                               rows=[CompareRow(**row) for row in comp["rows"]])

    @app.post("/trace", response_model=TraceResponse)
    def trace(req: TraceRequest):
        if req.tap != "moments":
            raise HTTPException(status_code=400, detail=f"unknown tap {req.tap!r}")
        try:
            preset = get_preset(req.preset)
            arm = req.arm or preset.arms[0].name
            overrides = _merged_overrides(req.scene_file, req.overrides)
            result = run_arm(req.preset, arm, req.seed, overrides or None,
                             tap_moments=True)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        paths = write_arm_outputs(result, Path(req.out_dir) / arm)
        assert "moments" in paths, "tap produced no moment rows"
        return TraceResponse(preset=req.preset, arm=arm,
                             moments_csv=paths["moments"],
                             n_rows=len(result.moment_rows))

    return app


def _preset_info(preset) -> PresetInfo:
    return PresetInfo(
        name=preset.name,
        description=preset.description,
        base={k: str(v) for k, v in preset.base.items()},
        arms=[ArmInfo(name=a.name, overrides={k: str(v) for k, v in a.overrides.items()})
              for a in preset.arms],
        baseline_arm=preset.baseline,
        family_baseline=preset.family_baseline,
    )


app = create_app()
