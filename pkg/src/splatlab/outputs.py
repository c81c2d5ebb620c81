"""Experiment output emission: CSV metrics, JSON summaries, event logs,
checkpoint renders (PPM) and depth maps (PGM)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, write_config_file
from .metrics import MetricsRecord
from .pipeline import TrainingResult
from .ppm import write_pgm16, write_ppm
from .renderer import render_depth, render_forward
from .scene import full_canvas_viewpoint

__all__ = [
    "MOMENTS_HEADER",
    "write_metrics_csv",
    "read_metrics_csv",
    "write_arm_outputs",
    "write_summary",
    "read_summary",
    "compare_dirs",
]

MOMENTS_HEADER = "iter,attr,mean_sqrt_v,max_sqrt_v,mean_abs_m_over_sqrt_v,max_abs_m_over_sqrt_v"


def write_metrics_csv(path, records) -> None:
    lines = [MetricsRecord.CSV_HEADER]
    lines.extend(rec.csv_row() for rec in records)
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != MetricsRecord.CSV_HEADER:
        raise ValueError(f"{path}: unexpected metrics header")
    return [MetricsRecord.from_csv_row(row) for row in lines[1:] if row]


def _write_events(path, events) -> None:
    with Path(path).open("w") as fh:
        for event in events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")


def _write_moments(path, rows) -> None:
    lines = [MOMENTS_HEADER]
    for r in rows:
        lines.append(",".join([
            str(r["iter"]), r["attr"], repr(r["mean_sqrt_v"]), repr(r["max_sqrt_v"]),
            repr(r["mean_abs_m_over_sqrt_v"]), repr(r["max_abs_m_over_sqrt_v"]),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_arm_outputs(result: TrainingResult, arm_dir) -> dict:
    """Write one arm's metrics, events, configs and checkpoint renders."""
    arm_dir = Path(arm_dir)
    arm_dir.mkdir(parents=True, exist_ok=True)
    paths = {"dir": str(arm_dir)}

    write_metrics_csv(arm_dir / "metrics.csv", result.metrics)
    paths["metrics"] = str(arm_dir / "metrics.csv")
    _write_events(arm_dir / "events.jsonl", result.events)
    paths["events"] = str(arm_dir / "events.jsonl")
    write_config_file(result.config, arm_dir / "config.cfg")
    if result.moment_rows:
        _write_moments(arm_dir / "moments.csv", result.moment_rows)
        paths["moments"] = str(arm_dir / "moments.csv")

    renders = arm_dir / "renders"
    renders.mkdir(exist_ok=True)
    canvas_vp = full_canvas_viewpoint(result.config.scene)
    final_img, _, _ = render_forward(result.pset, canvas_vp)
    target_img, _, _ = render_forward(result.gt, canvas_vp)
    write_ppm(renders / "final.ppm", final_img)
    write_ppm(renders / "target.ppm", target_img)
    write_pgm16(renders / "final_depth.pgm", render_depth(result.pset, canvas_vp))
    result.pset.save(arm_dir / "primitives.bin")
    return paths


def _final_row_doc(rec: MetricsRecord) -> dict:
    return {
        "iter": rec.iteration, "psnr": rec.psnr, "ssim": rec.ssim,
        "np": rec.n_p, "na": rec.n_a, "nd": rec.n_d,
        "delta_na": rec.delta_na, "mean_mv": rec.mean_mv, "max_mv": rec.max_mv,
    }


def write_summary(out_dir, preset_name: str, seed: int, baseline_arm: str,
                  results: dict) -> str:
    """Final-row comparison table across the preset's arms."""
    doc = {
        "preset": preset_name,
        "seed": seed,
        "baseline_arm": baseline_arm,
        "arms": {},
    }
    base_final = results[baseline_arm].final_metrics()
    for arm, result in results.items():
        row = _final_row_doc(result.final_metrics())
        row["delta_na_vs_baseline"] = (
            (row["na"] - base_final.n_a) / base_final.n_a if base_final.n_a else None
        )
        row["relocated_total"] = result.relocated_total
        doc["arms"][arm] = row
    path = Path(out_dir) / "summary.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return str(path)


def read_summary(out_dir) -> dict:
    return json.loads((Path(out_dir) / "summary.json").read_text())


def compare_dirs(dirs) -> dict:
    """Cross-run comparison; the first directory's baseline arm anchors delta_na."""
    if not dirs:
        raise ValueError("need at least one output directory")
    summaries = [(str(d), read_summary(d)) for d in dirs]
    first_dir, first = summaries[0]
    anchor = first["arms"][first["baseline_arm"]]
    rows = []
    for d, summary in summaries:
        for arm, row in sorted(summary["arms"].items()):
            rows.append({
                "dir": d,
                "preset": summary["preset"],
                "seed": summary["seed"],
                "arm": arm,
                "psnr": row["psnr"],
                "ssim": row["ssim"],
                "np": row["np"],
                "na": row["na"],
                "nd": row["nd"],
                "delta_na_vs_anchor": (row["na"] - anchor["na"]) / anchor["na"]
                if anchor["na"] else None,
            })
    return {
        "anchor": {"dir": first_dir, "arm": first["baseline_arm"], "na": anchor["na"]},
        "rows": rows,
    }


def format_comparison(comparison: dict) -> str:
    header = f"{'preset':<12} {'arm':<8} {'seed':>4} {'psnr':>8} {'ssim':>7} " \
             f"{'np':>6} {'na':>6} {'nd':>6} {'d_na':>8}"
    lines = [header, "-" * len(header)]
    for r in comparison["rows"]:
        dna = r["delta_na_vs_anchor"]
        lines.append(
            f"{r['preset']:<12} {r['arm']:<8} {r['seed']:>4} {r['psnr']:>8.3f} "
            f"{r['ssim']:>7.4f} {r['np']:>6} {r['na']:>6} {r['nd']:>6} "
            f"{(f'{dna:+.1%}' if dna is not None else 'n/a'):>8}"
        )
    return "\n".join(lines)
