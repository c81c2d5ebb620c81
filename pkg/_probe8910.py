"""Background probe: criteria 8/9/10 dynamics on the standard scene."""
import json
import sys
from concurrent.futures import ProcessPoolExecutor

from splatlab.experiments import run_arm
from splatlab.presets import STANDARD_SCENE


def one(args):
    preset, arm, seed, extra = args
    res = run_arm(preset, arm, seed=seed, overrides={**STANDARD_SCENE, **extra})
    f = res.final_metrics()
    return {"preset": preset, "arm": arm, "seed": seed, "extra": extra,
            "psnr": f.psnr, "ssim": f.ssim, "np": f.n_p, "na": f.n_a, "nd": f.n_d,
            "relocated": res.relocated_total}


JOBS = []
# criterion 8: autonomous redundancy removal
for seed in (1, 2):
    JOBS.append(("gs-adamwgs", "gs8", seed, {}))
# criterion 10: coupled-regularization fragility
for seed in (1,):
    JOBS.append(("mc-sparse", "sparse", seed, {"optimizer.lambda_o": 0.1}))
# criterion 9 + 10 baselines: relocation counts and reference PSNR
for seed in (1, 2, 3, 4, 5):
    JOBS.append(("mc-sparse", "sparse", seed, {}))
    JOBS.append(("mc-rsr-l1", "lo", seed, {}))
    JOBS.append(("mc-adamwgs", "lo", seed, {}))

if __name__ == "__main__":
    out = []
    with ProcessPoolExecutor(max_workers=2) as pool:
        for row in pool.map(one, JOBS):
            out.append(row)
            print(json.dumps(row), flush=True)
    with open("_probe8910_results.json", "w") as fh:
        json.dump(out, fh, indent=1)
    print("DONE", file=sys.stderr)
