"""Run the seeded suites and write their reports as JSON.

    python3 scripts/run_suites.py --out reports/ [--seed 0]
"""
import argparse
import time
from pathlib import Path

from awp.suites import canonical_json, joint_suite, oracle_suite, quantization_suite, recovery_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="reports")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = {
        "recovery_noiseless": lambda: recovery_suite(noise_level=0.0, seed0=args.seed),
        "recovery_noisy": lambda: recovery_suite(noise_level=0.1, seed0=args.seed),
        "oracle": lambda: oracle_suite(seed0=args.seed),
        "quantization": lambda: quantization_suite(seed0=args.seed),
        "joint": lambda: joint_suite(seed0=args.seed),
    }
    for name, job in jobs.items():
        t0 = time.perf_counter()
        rep = job()
        (out / f"{name}.json").write_text(canonical_json(rep))
        print(f"{name:20s} {time.perf_counter() - t0:6.1f}s -> {out / (name + '.json')}")


if __name__ == "__main__":
    main()
