"""Pydantic request/response models for the lab service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class ArmInfo(BaseModel):
    name: str
    overrides: dict = Field(default_factory=dict)


class PresetInfo(BaseModel):
    name: str
    description: str
    base: dict = Field(default_factory=dict)
    arms: list[ArmInfo]
    baseline_arm: str
    family_baseline: str = ""


class RunRequest(BaseModel):
    preset: str
    seed: int = 0
    out_dir: Optional[str] = None
    scene_file: Optional[str] = None
    overrides: dict[str, str] = Field(default_factory=dict)
    arms: Optional[list[str]] = None
    tap_moments: bool = False
    wait: bool = True


class MetricsRow(BaseModel):
    iter: int
    psnr: float
    ssim: float
    np: int
    na: int
    nd: int
    delta_na: Optional[float] = None
    mean_mv: float = 0.0
    max_mv: float = 0.0


class ArmResult(BaseModel):
    name: str
    final: MetricsRow
    relocated_total: int = 0
    dir: Optional[str] = None


class RunResult(BaseModel):
    preset: str
    seed: int
    baseline_arm: str
    arms: dict[str, ArmResult]
    out_dir: Optional[str] = None
    summary_path: Optional[str] = None


class JobInfo(BaseModel):
    job_id: str
    status: str  # queued | running | done | error
    request: RunRequest
    result: Optional[RunResult] = None
    error: Optional[str] = None


class CompareRequest(BaseModel):
    dirs: list[str]


class CompareRow(BaseModel):
    dir: str
    preset: str
    seed: int
    arm: str
    psnr: float
    ssim: float
    np: int
    na: int
    nd: int
    delta_na_vs_anchor: Optional[float] = None


class CompareResponse(BaseModel):
    anchor: dict
    rows: list[CompareRow]


class TraceRequest(BaseModel):
    tap: str = "moments"
    preset: str
    arm: Optional[str] = None
    seed: int = 0
    out_dir: str
    scene_file: Optional[str] = None
    overrides: dict[str, str] = Field(default_factory=dict)


class TraceResponse(BaseModel):
    preset: str
    arm: str
    moments_csv: str
    n_rows: int
