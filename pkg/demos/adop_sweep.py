"""Mean ADOP of the fused estimator as the virtual-satellite weight grows.

    python demos/adop_sweep.py --duration 30
"""
import argparse
import os
import tempfile

import numpy as np

from canyon_rtk.io import load_dataset
from canyon_rtk.pipeline import RunConfig, run_pipeline
from canyon_rtk.sim import canyon, generate_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--duration", type=float, default=30.0)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--weights", default="0,0.5,1,1.5,2,2.5")
    args = ap.parse_args()
    weights = [float(w) for w in args.weights.split(",")]

    data = os.path.join(tempfile.mkdtemp(prefix="adop_demo_"), "data")
    generate_dataset(canyon(seed=args.seed, duration=args.duration), data)
    ds = load_dataset(data, with_truth=False)
    result = run_pipeline(RunConfig(dataset=data, mode="fgo_vs_nlos", adop_weights=weights), ds)

    sweep = np.array(result.adop_sweep, dtype=float)
    ref = None
    for w in weights:
        mean = float(np.nanmean(sweep[sweep[:, 1] == w, 2]))
        ref = ref or mean
        bar = "#" * int(round(40 * mean / ref))
        print(f"weight {w:4.2f}  ADOP {mean:.4f}  {bar}")


if __name__ == "__main__":
    main()
