"""Compare AWP with RTN and with the sequential pipelines under different
synthetic activation models.

Isotropic i.i.d. activations leave little for an activation-aware method
to exploit; correlated (latent factor) and heteroscedastic (per-channel
scale) models are closer to real layer inputs.

    python3 scripts/activation_models.py --instances 20
"""
import argparse

import numpy as np

from awp.baselines import ActivationNorms, rtn_quantize, sequential_pipeline
from awp.engine import CompressionConfig, run
from awp.projections import PRUNE_THEN_QUANT, QUANT_THEN_PRUNE, QuantSpec, RowSparsitySpec
from awp.suites import factor_activations
from awp.tensor import activation_loss, covariance


def isotropic(d, n, rng):
    return rng.standard_normal((d, n))


def factor(d, n, rng):
    return factor_activations(d, n, rng)


def channel_scaled(d, n, rng, spread=0.5):
    return np.exp(spread * rng.standard_normal((d, 1))) * rng.standard_normal((d, n))


MODELS = {"isotropic": isotropic, "factor": factor, "channel_scaled": channel_scaled}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--instances", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    spec = RowSparsitySpec.from_ratio(0.5, 128)
    print(f"{'model':15s} {'quant<=RTN':>11s} {'joint<=seq':>11s}")
    for name, gen in MODELS.items():
        q_wins = j_wins = 0
        for i in range(args.instances):
            rng = np.random.default_rng([args.seed, i])
            w = rng.standard_normal((64, 128))
            x = gen(128, 1024, rng)
            cov = covariance(x)
            norms = ActivationNorms.from_activations(x)
            q = run(w, cov, CompressionConfig.quantization(4, 16)).theta
            q_wins += activation_loss(w, q, cov) <= activation_loss(w, rtn_quantize(w, QuantSpec(4, 16))[0], cov)
            j = run(w, cov, CompressionConfig.joint(ratio=0.5)).theta
            seq = min(activation_loss(w, sequential_pipeline(w, norms, spec, QuantSpec(4, 128), o).theta, cov)
                      for o in (PRUNE_THEN_QUANT, QUANT_THEN_PRUNE))
            j_wins += activation_loss(w, j, cov) <= seq
        print(f"{name:15s} {q_wins:>5d}/{args.instances:<5d} {j_wins:>5d}/{args.instances:<5d}")


if __name__ == "__main__":
    main()
