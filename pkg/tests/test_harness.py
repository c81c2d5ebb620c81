import json

import numpy as np
import pytest

from splatlab.config import ExperimentConfig, default_config, parse_override, read_config_file, write_config_file
from splatlab.metrics import MetricsRecord, compute_metrics, delta_n, psnr
from splatlab.outputs import (
    compare_dirs,
    read_metrics_csv,
    read_summary,
    write_arm_outputs,
    write_metrics_csv,
    write_summary,
)
from splatlab.presets import PRESETS, config_for, get_preset, preset_names
from splatlab.rng import RngHub
from splatlab.scene import SceneSpec, gen_scene, make_viewpoints

TINY = {
    "scene.canvas": 32, "scene.gt_count": 8, "scene.redundancy": 1.0,
    "scene.crop_size": 16, "scene.crops_x": 2, "scene.crops_y": 2,
    "stages.warmup_end": 4, "stages.densify_end": 16, "stages.total_iters": 30,
    "stages.densify_interval": 4, "stages.reset_interval": 8,
    "densify.max_primitives": 48, "run.metrics_interval": 10,
    "run.dar_opacity_start": 6,
}


class TestSceneGen:
    def test_zero_redundancy_count(self):
        spec = SceneSpec(canvas=64, gt_count=10, redundancy=0.0, crop_size=32,
                         crops_x=2, crops_y=2)
        gt, targets, initial, vps = gen_scene(spec)
        assert len(initial) == 10 == len(gt)

    def test_redundancy_three(self):
        spec = SceneSpec(canvas=64, gt_count=50, redundancy=3.0, crop_size=32,
                         crops_x=2, crops_y=2)
        _, _, initial, _ = gen_scene(spec)
        assert len(initial) == 200  # 50 + 150 duplicates

    def test_gt_renders_identical_to_targets(self):
        spec = SceneSpec(canvas=32, gt_count=6, redundancy=0.0, crop_size=16,
                         crops_x=2, crops_y=2)
        gt, targets, _, vps = gen_scene(spec)
        rec = compute_metrics(gt, targets, vps)
        assert rec.psnr == 99.0
        assert rec.ssim == pytest.approx(1.0, abs=1e-12)

    def test_deterministic_per_seed(self):
        spec = SceneSpec(canvas=32, gt_count=6, redundancy=1.0, crop_size=16,
                         crops_x=2, crops_y=2, seed=33)
        a = gen_scene(spec)
        b = gen_scene(spec)
        assert np.array_equal(a[2].mu, b[2].mu)
        assert all(np.array_equal(x, y) for x, y in zip(a[1], b[1]))

    def test_viewpoints_cover_canvas(self):
        spec = SceneSpec()
        vps = make_viewpoints(spec)
        assert len(vps) == spec.n_viewpoints
        covered = np.zeros((spec.canvas, spec.canvas), dtype=bool)
        for vp in vps:
            x0, y0, x1, y1 = vp.extent()
            covered[int(y0):int(y1), int(x0):int(x1)] = True
        assert covered.all()

    def test_degenerate_spec_rejected(self):
        with pytest.raises(ValueError):
            SceneSpec(gt_count=0)
        with pytest.raises(ValueError):
            SceneSpec(canvas=16)

    def test_low_birth_opacity(self):
        spec = SceneSpec(canvas=32, gt_count=6, redundancy=1.0, crop_size=16,
                         crops_x=2, crops_y=2)
        _, _, initial, _ = gen_scene(spec)
        assert np.allclose(initial.opacity(), 0.1, rtol=1e-12)


class TestMetrics:
    def test_psnr_closed_form(self, rng):
        a = rng.random((8, 8, 3))
        b = a + 0.1  # MSE = 0.01
        assert psnr(a, b) == pytest.approx(20.0, rel=1e-9)

    def test_psnr_cap(self, rng):
        a = rng.random((8, 8, 3))
        assert psnr(a, a.copy()) == 99.0

    def test_delta_na_formula_full_scale_numbers(self):
        assert delta_n(1.571e6, 3.098e6) == pytest.approx(-0.4929, abs=5e-4)

    def test_csv_row_roundtrip(self):
        rec = MetricsRecord(iteration=120, psnr=31.25, ssim=0.912, n_p=400,
                            n_a=380, n_d=20, delta_na=-0.493,
                            mean_mv=0.12, max_mv=1.7)
        back = MetricsRecord.from_csv_row(rec.csv_row())
        assert back == rec

    def test_csv_row_roundtrip_without_delta(self):
        rec = MetricsRecord(iteration=1, psnr=10.0, ssim=0.5, n_p=2, n_a=1, n_d=1)
        back = MetricsRecord.from_csv_row(rec.csv_row())
        assert back.delta_na is None


class TestConfigPlumbing:
    def test_flat_roundtrip(self):
        cfg = default_config()
        again = ExperimentConfig.from_flat(cfg.to_flat())
        assert again.to_flat() == cfg.to_flat()

    def test_unknown_key_rejected(self):
        from splatlab.optimizer import ConfigError
        with pytest.raises(ConfigError):
            default_config().with_overrides({"optimizer.nope": 1})

    def test_override_parsing(self):
        assert parse_override("optimizer.mode=sparse-adam") == ("optimizer.mode", "sparse-adam")
        from splatlab.optimizer import ConfigError
        with pytest.raises(ConfigError):
            parse_override("no-equals")

    def test_config_file_roundtrip(self, tmp_path):
        cfg = default_config().with_overrides({"optimizer.lambda_o": 0.25})
        path = tmp_path / "exp.cfg"
        write_config_file(cfg, path)
        flat = read_config_file(path)
        assert ExperimentConfig.from_flat(flat).optimizer.lambda_o == 0.25

    def test_schedule_encoding(self):
        cfg = default_config().with_overrides({"rsr.milestones": "0:0.05,775:0.25"})
        assert cfg.rsr.schedule.milestones == ((0, 0.05), (775, 0.25))
        assert cfg.to_flat()["rsr.milestones"] == "0:0.05,775:0.25"


class TestPresets:
    def test_registry_names(self):
        expected = {"gs-adam", "gs-sparse", "gs-half", "gs-rsr-only", "gs-adamwgs",
                    "mc-adam", "mc-sparse", "mc-aiu", "mc-rsr-l1", "mc-adamwgs"}
        assert set(preset_names()) == expected

    def test_unknown_preset_lists_available(self):
        from splatlab.optimizer import ConfigError
        with pytest.raises(ConfigError) as exc:
            get_preset("gs-nope")
        assert "gs-adam" in str(exc.value)

    def test_gs_sparse_differs_only_in_mode(self):
        base = config_for("gs-adam", seed=3)
        sparse = config_for("gs-sparse", seed=3)
        assert base.diff(sparse) == {"optimizer.mode": ("coupled-adam", "sparse-adam")}

    def test_gs_half_differs_only_in_stage_mode(self):
        base = config_for("gs-adam", seed=3)
        half = config_for("gs-half", seed=3)
        assert set(base.diff(half)) == {"stages.mode_pop"}

    # every preset must touch only the fields its ablation row varies
    ALLOWED = {
        "gs-sparse": {"optimizer.mode"},
        "gs-half": {"stages.mode_pop"},
        "gs-rsr-only": {"optimizer.mode", "rsr.enabled", "rsr.milestones", "rsr.interval"},
        "gs-adamwgs": {"optimizer.mode", "optimizer.lambda_o", "optimizer.lambda_s",
                       "rsr.enabled", "rsr.milestones", "rsr.interval",
                       "noise.enabled", "densify.opacity_reset"},
        "mc-sparse": {"optimizer.mode"},
        "mc-aiu": {"aiu.enabled", "aiu.start", "aiu.end", "aiu.prob", "aiu.eta",
                   "rsr.enabled", "rsr.milestones", "rsr.interval"},
        "mc-rsr-l1": {"rsr.enabled", "rsr.milestones", "rsr.interval"},
        "mc-adamwgs": {"optimizer.mode", "optimizer.lambda_o", "optimizer.lambda_s",
                       "rsr.enabled", "rsr.milestones", "rsr.interval"},
    }

    @pytest.mark.parametrize("name", sorted(ALLOWED))
    def test_config_diff_audit(self, name):
        preset = get_preset(name)
        baseline = config_for(preset.family_baseline, seed=0)
        for arm in preset.arms:
            cfg = config_for(name, arm.name, seed=0)
            assert set(baseline.diff(cfg)) <= self.ALLOWED[name], \
                f"{name}/{arm.name} touches unexpected fields"

    def test_mc_adamwgs_full_recipe(self):
        cfg = config_for("mc-adamwgs", "lo", seed=0)
        assert cfg.optimizer.mode == "adamw-gs"
        assert cfg.optimizer.lambda_o == 0.001
        assert cfg.optimizer.lambda_s == 1e-5
        assert cfg.optimizer.ct_opacity == 10.0
        assert cfg.rsr.enabled
        assert cfg.rsr.alpha1 == 0.2 and cfg.rsr.alpha2 == 0.04
        assert cfg.rsr.schedule.interval == 10
        assert cfg.densify.relocation

    def test_gs7_is_no_reset_variant(self):
        gs8 = config_for("gs-adamwgs", "gs8", seed=0)
        gs7 = config_for("gs-adamwgs", "gs7", seed=0)
        assert gs8.densify.opacity_reset and not gs7.densify.opacity_reset
        assert gs8.noise.enabled and gs7.noise.enabled
        assert gs8.diff(gs7) == {"densify.opacity_reset": ("true", "false")}


class TestOutputs:
    def test_empty_log_header_only(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics_csv(path, [])
        assert path.read_text() == MetricsRecord.CSV_HEADER + "\n"
        assert read_metrics_csv(path) == []

    def test_csv_roundtrip_lossless(self, tmp_path, rng):
        recs = [
            MetricsRecord(iteration=i, psnr=float(rng.random() * 50),
                          ssim=float(rng.random()), n_p=100 + i, n_a=90 + i, n_d=10,
                          delta_na=float(rng.standard_normal()),
                          mean_mv=float(rng.random()), max_mv=float(rng.random() * 9))
            for i in range(7)
        ]
        path = tmp_path / "m.csv"
        write_metrics_csv(path, recs)
        assert read_metrics_csv(path) == recs

    def test_arm_outputs_and_summary(self, tmp_path):
        from splatlab.experiments import run_experiment_preset
        run = run_experiment_preset("gs-sparse", seed=5, overrides=TINY,
                                    out_dir=tmp_path / "out")
        arm_dir = tmp_path / "out" / "sparse"
        assert (arm_dir / "metrics.csv").exists()
        assert (arm_dir / "events.jsonl").exists()
        assert (arm_dir / "config.cfg").exists()
        assert (arm_dir / "renders" / "final.ppm").exists()
        assert (arm_dir / "renders" / "final_depth.pgm").exists()
        summary = read_summary(tmp_path / "out")
        assert summary["preset"] == "gs-sparse"
        assert summary["baseline_arm"] == "sparse"
        # delta of the baseline arm against itself is exactly zero
        assert summary["arms"]["sparse"]["delta_na_vs_baseline"] == 0.0

    def test_compare_dirs(self, tmp_path):
        from splatlab.experiments import run_experiment_preset
        run_experiment_preset("gs-adam", seed=5, overrides=TINY, out_dir=tmp_path / "a")
        run_experiment_preset("gs-sparse", seed=5, overrides=TINY, out_dir=tmp_path / "b")
        comp = compare_dirs([tmp_path / "a", tmp_path / "b"])
        assert comp["anchor"]["arm"] == "adam"
        assert len(comp["rows"]) == 2
        base_row = [r for r in comp["rows"] if r["arm"] == "adam"][0]
        assert base_row["delta_na_vs_anchor"] == 0.0

    def test_events_jsonl_parses(self, tmp_path):
        from splatlab.experiments import run_experiment_preset
        run_experiment_preset("gs-adam", seed=5, overrides=TINY, out_dir=tmp_path / "out")
        lines = (tmp_path / "out" / "adam" / "events.jsonl").read_text().splitlines()
        for line in lines:
            doc = json.loads(line)
            assert set(doc) == {"iter", "kind", "count", "affected_ids_hash"}
