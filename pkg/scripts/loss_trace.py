"""Normalized activation-aware loss per iteration for one synthetic layer.

Writes the trace as CSV and prints a coarse text plot.

    python3 scripts/loss_trace.py --mode prune --out trace.csv
"""
import argparse

import numpy as np

from awp.baselines import ActivationNorms
from awp.engine import CompressionConfig, run
from awp.suites import factor_activations
from awp.tensor import covariance


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--mode", choices=("prune", "quantize", "joint"), default="prune")
    ap.add_argument("--d-out", type=int, default=256)
    ap.add_argument("--d-in", type=int, default=512)
    ap.add_argument("--n", type=int, default=2048)
    ap.add_argument("--ratio", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="trace.csv")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    w = rng.standard_normal((args.d_out, args.d_in))
    x = factor_activations(args.d_in, args.n, rng)
    cov = covariance(x)
    cfg = {
        "prune": lambda: CompressionConfig.pruning(ratio=args.ratio),
        "quantize": lambda: CompressionConfig.quantization(4, 128),
        "joint": lambda: CompressionConfig.joint(ratio=args.ratio),
    }[args.mode]()
    res = run(w, cov, cfg, norms=ActivationNorms.from_activations(x))
    with open(args.out, "w") as fh:
        fh.write(res.trace.to_csv())

    losses = np.asarray(res.trace.normalized_loss)
    lo, hi = losses.min(), losses.max()
    width = 50
    step = max(1, len(losses) // 25)
    for t in range(0, len(losses), step):
        bar = int(round((losses[t] - lo) / (hi - lo) * width)) if hi > lo else 0
        print(f"{t:4d} {losses[t]:.5f} {'#' * bar}")
    print(f"{res.stop_reason} after {res.iterations_run} iterations, {res.wall_time_ms:.0f} ms -> {args.out}")


if __name__ == "__main__":
    main()
