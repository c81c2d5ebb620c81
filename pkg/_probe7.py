"""Background probe: criterion-7 direction robustness across settings."""
import json
import sys
from concurrent.futures import ProcessPoolExecutor

from splatlab.experiments import run_arm

BASE = {
    "scene.gt_count": 250, "scene.redundancy": 2.0,
    "scene.crop_size": 48, "scene.crops_x": 4, "scene.crops_y": 4,
    "densify.max_primitives": 1200, "densify.grad_threshold": 0.010,
    "stages.densify_end": 1000,
    "optimizer.lr_tau": 0.1,
}
VARIANTS = {
    "r240": {"stages.reset_interval": 240},
    "r240_lr05": {"stages.reset_interval": 240, "optimizer.lr_tau": 0.05},
}
SEEDS = (1, 2, 3, 4, 5)


def one(args):
    label, preset, arm, seed = args
    ov = {**BASE, **VARIANTS[label]}
    res = run_arm(preset, arm, seed=seed, overrides=ov)
    f = res.final_metrics()
    return {"variant": label, "preset": preset, "seed": seed,
            "psnr": f.psnr, "np": f.n_p, "na": f.n_a, "nd": f.n_d}


if __name__ == "__main__":
    jobs = [(label, preset, arm, seed)
            for label in VARIANTS
            for preset, arm in (("gs-adam", "adam"), ("gs-sparse", "sparse"), ("gs-half", "half"))
            for seed in SEEDS]
    out = []
    with ProcessPoolExecutor(max_workers=2) as pool:
        for row in pool.map(one, jobs):
            out.append(row)
            print(json.dumps(row), flush=True)
    with open("_probe7_results.json", "w") as fh:
        json.dump(out, fh, indent=1)
    print("DONE", file=sys.stderr)
