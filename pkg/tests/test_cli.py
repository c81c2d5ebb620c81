from pathlib import Path

import pytest
from click.testing import CliRunner

from splatlab.cli import main

TINY_ARGS = []
for k, v in {
    "scene.canvas": 32, "scene.gt_count": 8, "scene.redundancy": 1.0,
    "scene.crop_size": 16, "scene.crops_x": 2, "scene.crops_y": 2,
    "stages.warmup_end": 4, "stages.densify_end": 16, "stages.total_iters": 30,
    "stages.densify_interval": 4, "stages.reset_interval": 8,
    "densify.max_primitives": 48, "run.metrics_interval": 10,
    "run.dar_opacity_start": 6,
}.items():
    TINY_ARGS += ["--override", f"{k}={v}"]


@pytest.fixture
def runner():
    return CliRunner()


def test_presets_listing(runner):
    result = runner.invoke(main, ["presets"])
    assert result.exit_code == 0, result.output
    assert "gs-adamwgs" in result.output
    assert "mc-sparse" in result.output


def test_run_writes_outputs(runner, tmp_path):
    out = tmp_path / "run1"
    result = runner.invoke(main, ["run", "--preset", "gs-sparse", "--seed", "3",
                                  "--out", str(out), *TINY_ARGS])
    assert result.exit_code == 0, result.output
    assert "psnr=" in result.output
    assert (out / "sparse" / "metrics.csv").exists()
    assert (out / "summary.json").exists()


def test_run_determinism_bitwise(runner, tmp_path):
    outs = []
    for sub in ("r1", "r2"):
        out = tmp_path / sub
        result = runner.invoke(main, ["run", "--preset", "gs-sparse", "--seed", "7",
                                      "--out", str(out), *TINY_ARGS])
        assert result.exit_code == 0, result.output
        outs.append((out / "sparse" / "metrics.csv").read_bytes())
    assert outs[0] == outs[1]


def test_scene_file_applies(runner, tmp_path):
    scene = tmp_path / "scene.cfg"
    scene.write_text("\n".join([
        "scene.canvas = 32", "scene.gt_count = 8", "scene.redundancy = 1.0",
        "scene.crop_size = 16", "scene.crops_x = 2", "scene.crops_y = 2",
        "stages.warmup_end = 4", "stages.densify_end = 16",
        "stages.total_iters = 20", "stages.densify_interval = 4",
        "stages.reset_interval = 8", "densify.max_primitives = 48",
        "run.metrics_interval = 10", "run.dar_opacity_start = 6",
    ]) + "\n")
    out = tmp_path / "sc"
    result = runner.invoke(main, ["run", "--preset", "gs-sparse", "--seed", "1",
                                  "--out", str(out), "--scene", str(scene)])
    assert result.exit_code == 0, result.output
    csv = (out / "sparse" / "metrics.csv").read_text().splitlines()
    assert csv[-1].startswith("20,")  # total_iters from the scene file


def test_compare(runner, tmp_path):
    for preset, sub in (("gs-adam", "a"), ("gs-sparse", "b")):
        result = runner.invoke(main, ["run", "--preset", preset, "--seed", "3",
                                      "--out", str(tmp_path / sub), *TINY_ARGS])
        assert result.exit_code == 0, result.output
    result = runner.invoke(main, ["compare", str(tmp_path / "a"), str(tmp_path / "b")])
    assert result.exit_code == 0, result.output
    assert "gs-sparse" in result.output
    assert "+0.0%" in result.output or "d_na" in result.output


def test_trace_moments(runner, tmp_path):
    out = tmp_path / "tr"
    result = runner.invoke(main, ["trace", "--tap", "moments", "--preset", "gs-sparse",
                                  "--seed", "2", "--out", str(out), *TINY_ARGS])
    assert result.exit_code == 0, result.output
    moments = out / "sparse" / "moments.csv"
    assert moments.exists()
    assert "rows" in result.output


def test_bad_override_fails_cleanly(runner, tmp_path):
    result = runner.invoke(main, ["run", "--preset", "gs-sparse", "--out",
                                  str(tmp_path / "x"), "--override", "bogus.key=1"])
    assert result.exit_code != 0
    assert "server returned" in result.output
