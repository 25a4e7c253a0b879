"""Command-line front end.

Exit codes: 0 success, 2 input or configuration error, 3 numerical error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import suites
from .analysis import ORACLE_MAX_DIM, oracle_sparse, row_losses
from .baselines import (
    ActivationNorms,
    awq_lite_quantize,
    magnitude_prune,
    rtn_quantize,
    sequential_pipeline,
    wanda_prune,
)
from .engine import CompressionConfig, ConfigError, LossTrace, RampSchedule, StepRule, run
from .io import FormatError, load_awpt, save_awpt, save_grid, write_json
from .projections import PRUNE_THEN_QUANT, QUANT_THEN_PRUNE, QuantSpec, RowSparsitySpec
from .tensor import Covariance, NumericalError, ShapeError, activation_loss, covariance, frobenius

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
BASELINES = ("magnitude", "wanda", "rtn", "awq-lite", "wanda+awq", "awq+wanda")


class InputError(ValueError):
    pass


@dataclass
class JobManifest:
    """One invocation: what to run, on which tensors, with which settings."""

    command: str
    weights: Path | None = None
    acts: Path | None = None
    cov: Path | None = None
    out: Path = Path("out")
    seed: int = 0
    options: dict = field(default_factory=dict)

    def validate(self):
        if self.command in ("bench",):
            return
        if self.weights is None:
            raise InputError("--weights is required")
        if (self.acts is None) == (self.cov is None):
            raise InputError("give exactly one of --acts or --cov")
        for p in (self.weights, self.acts, self.cov):
            if p is not None and not Path(p).is_file():
                raise InputError(f"no such file: {p}")

    def load(self):
        """Returns ``(W, Covariance, ActivationNorms)``."""
        w = _load_tensor(self.weights, "weights")
        if self.acts is not None:
            x = _load_tensor(self.acts, "activations")
            if x.shape[0] != w.shape[1]:
                raise InputError(f"activations have {x.shape[0]} channels, weights have {w.shape[1]} columns")
            return w, covariance(x), ActivationNorms.from_activations(x)
        c = _load_tensor(self.cov, "covariance")
        if c.shape != (w.shape[1], w.shape[1]):
            raise InputError(f"covariance shape {c.shape} does not match d_in={w.shape[1]}")
        cov = Covariance.from_matrix(np.asarray(c, dtype=np.float64))
        return w, cov, ActivationNorms.from_covariance(cov)


def _load_tensor(path, what) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        a = np.load(path, allow_pickle=False)
    else:
        a = load_awpt(path)
    if a.ndim != 2:
        raise InputError(f"{what} must be a 2-D tensor, got shape {a.shape}")
    if not np.issubdtype(a.dtype, np.floating) or not np.all(np.isfinite(a)):
        raise InputError(f"{what} must hold finite floating-point values")
    return np.asarray(a, dtype=np.float64)


def _row_spec(args, d_in) -> RowSparsitySpec | None:
    if args.keep is not None:
        return RowSparsitySpec(args.keep, d_in)
    if args.ratio is not None:
        return RowSparsitySpec.from_ratio(args.ratio, d_in)
    return None


def build_config(mode: str, args) -> CompressionConfig:
    kw = {}
    if args.eta_rule is not None:
        kw["step_rule"] = StepRule.parse(args.eta_rule)
    if args.max_iters is not None:
        kw["max_iters"] = args.max_iters
    if args.tol is not None:
        kw["grad_tol"] = args.tol
    if args.init is not None:
        kw["init"] = args.init
    if args.dtype is not None:
        kw["dtype"] = args.dtype
    if args.freeze_grid:
        kw["freeze_grid"] = True
    bits = 4 if args.bits is None else args.bits
    group = 128 if args.group is None else args.group
    if mode == "prune":
        return CompressionConfig.pruning(ratio=args.ratio, keep=args.keep, **kw)
    if mode == "quantize":
        return CompressionConfig.quantization(bits, group, **kw)
    if mode == "joint":
        if args.joint_order is not None:
            kw["joint_order"] = args.joint_order
        if args.max_iters is not None:
            raise ConfigError("joint mode runs its fixed schedule; use --schedule instead of --max-iters")
        if args.schedule is not None:
            kw["schedule"] = RampSchedule(*args.schedule)
        return CompressionConfig.joint(ratio=args.ratio, keep=args.keep, bits=bits, group_size=group, **kw)
    raise ConfigError(f"unknown mode {mode!r}")


def _write_outputs(out: Path, theta, mask, grid, trace: LossTrace | None, scales=None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    files = {"theta": "theta.awpt"}
    save_awpt(out / "theta.awpt", np.ascontiguousarray(theta))
    if mask is not None:
        save_awpt(out / "mask.awpt", np.ascontiguousarray(mask, dtype=bool))
        files["mask"] = "mask.awpt"
    if grid is not None:
        save_grid(out / "grid.json", grid)
        files["grid"] = "grid.json"
    if scales is not None:
        save_awpt(out / "scales.awpt", np.asarray(scales, dtype=np.float64).reshape(1, -1))
        files["column_scales"] = "scales.awpt"
    if trace is not None:
        (out / "trace.csv").write_text(trace.to_csv())
        files["trace"] = "trace.csv"
    return files


def _jsonable(obj):
    return json.loads(suites.canonical_json(obj))


def cmd_compress(args, mode: str) -> int:
    job = _manifest(args, mode)
    w, cov, norms = job.load()
    cfg = build_config(mode, args)
    res = run(w, cov, cfg, norms=norms)
    files = _write_outputs(job.out, res.theta, res.mask, res.grid, res.trace)
    result = {
        "mode": mode,
        "shape": list(w.shape),
        "seed": job.seed,
        "config": cfg.echo(),
        "eta": res.eta,
        "initial_normalized_loss": res.trace.normalized_loss[0],
        "final_normalized_loss": res.trace.normalized_loss[-1],
        "iterations": res.iterations_run,
        "stop_reason": res.stop_reason,
        "wall_time_ms": res.wall_time_ms,
        "files": files,
    }
    write_json(job.out / "result.json", _jsonable(result))
    return EXIT_OK


def cmd_baseline(args) -> int:
    job = _manifest(args, "baseline")
    w, cov, norms = job.load()
    method = args.method
    d_in = w.shape[1]
    spec = _row_spec(args, d_in)
    qspec = QuantSpec(4 if args.bits is None else args.bits, 128 if args.group is None else args.group)
    needs_spec = method in ("magnitude", "wanda", "wanda+awq", "awq+wanda")
    if needs_spec and spec is None:
        raise ConfigError(f"{method} needs --ratio or --keep")
    if "awq" in method and norms.l1_mean_norms is None:
        raise InputError(f"{method} needs activations (--acts), not a covariance")
    t0 = time.perf_counter()
    mask = grid = scales = None
    if method == "magnitude":
        theta, mask = magnitude_prune(w, spec)
    elif method == "wanda":
        theta, mask = wanda_prune(w, norms, spec)
    elif method == "rtn":
        theta, grid = rtn_quantize(w, qspec)
    elif method == "awq-lite":
        theta, grid, scales = awq_lite_quantize(w, norms, qspec)
    else:
        order = PRUNE_THEN_QUANT if method == "wanda+awq" else QUANT_THEN_PRUNE
        r = sequential_pipeline(w, norms, spec, qspec, order)
        theta, mask, grid, scales = r.theta, r.mask, r.grid, r.column_scales
    elapsed = (time.perf_counter() - t0) * 1e3
    trace = LossTrace()
    trace.record(0, w, theta, cov, 0.0 if spec is None else 1.0 - spec.k / d_in)
    files = _write_outputs(job.out, theta, mask, grid, trace, scales)
    zero = activation_loss(w, np.zeros_like(w), cov)
    result = {
        "mode": "baseline",
        "method": method,
        "shape": list(w.shape),
        "seed": job.seed,
        "config": {"keep": None if spec is None else spec.k, "bits": qspec.bits, "group_size": qspec.group_size},
        "initial_normalized_loss": zero / frobenius(w) if frobenius(w) > 0 else 0.0,
        "final_normalized_loss": trace.normalized_loss[0],
        "iterations": 0,
        "stop_reason": "closed_form",
        "wall_time_ms": elapsed,
        "files": files,
    }
    write_json(job.out / "result.json", _jsonable(result))
    return EXIT_OK


def _ratio(a: float, b: float):
    if b > 0:
        return a / b
    return 1.0 if a == 0 else float("inf")


def cmd_oracle_compare(args) -> int:
    job = _manifest(args, "oracle-compare")
    w, cov, norms = job.load()
    d_in = w.shape[1]
    if d_in > ORACLE_MAX_DIM:
        raise InputError(f"oracle comparison needs d_in <= {ORACLE_MAX_DIM}, got {d_in}")
    spec = _row_spec(args, d_in)
    if spec is None:
        raise ConfigError("oracle-compare needs --keep or --ratio")
    step = StepRule.parse(args.eta_rule) if args.eta_rule else StepRule("safe")
    kw = {"step_rule": step}
    if args.max_iters is not None:
        kw["max_iters"] = args.max_iters
    if args.tol is not None:
        kw["grad_tol"] = args.tol
    res = run(w, cov, CompressionConfig.pruning(keep=spec.k, **kw), norms=norms)
    _, best = oracle_sparse(w, cov, spec.k)
    methods = {
        "awp": row_losses(w, res.theta, cov),
        "wanda": row_losses(w, wanda_prune(w, norms, spec)[0], cov),
        "magnitude": row_losses(w, magnitude_prune(w, spec)[0], cov),
    }
    rows = []
    for i in range(w.shape[0]):
        row = {"row": i, "oracle": best[i]}
        for name, losses in methods.items():
            row[name] = losses[i]
            row[f"{name}_ratio"] = _ratio(losses[i], best[i])
        rows.append(row)
    totals = {"oracle": float(np.sqrt(np.sum(best**2)))}
    for name, losses in methods.items():
        totals[name] = float(np.sqrt(np.sum(losses**2)))
        totals[f"{name}_ratio"] = _ratio(totals[name], totals["oracle"])
    report = {"keep": spec.k, "d_in": d_in, "eta_rule": step.describe(), "rows": rows, "totals": totals}
    job.out.mkdir(parents=True, exist_ok=True)
    (job.out / "comparison.json").write_text(suites.canonical_json(report))
    return EXIT_OK


SUITE_KINDS = {
    "recovery": suites.recovery_suite,
    "oracle": suites.oracle_suite,
    "quantization": suites.quantization_suite,
    "joint": suites.joint_suite,
}
_ALIASES = {"noise": "noise_level", "seed": "seed0", "group": "group_size"}


def _suite_entries(path) -> list[tuple[str, dict]]:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read suite file: {e}") from e
    if isinstance(raw, dict):
        raw = raw.get("suites", [raw])
    if not isinstance(raw, list):
        raise InputError("suite file must hold a list of suite objects")
    entries = []
    for item in raw:
        if not isinstance(item, dict):
            raise InputError(f"suite entry is not an object: {item!r}")
        item = {_ALIASES.get(k, k): v for k, v in item.items()}
        kind = item.pop("kind", "recovery")
        if kind not in SUITE_KINDS:
            raise InputError(f"unknown suite kind {kind!r}")
        entries.append((kind, item))
    return entries


def cmd_bench(args) -> int:
    entries = _suite_entries(args.suite) if args.suite else [(k, {}) for k in ("recovery", "oracle")]
    reports = []
    for kind, params in entries:
        params.setdefault("seed0", args.seed)
        try:
            rep = SUITE_KINDS[kind](**params)
        except TypeError as e:
            raise InputError(f"bad parameters for {kind} suite: {e}") from e
        except Exception as e:
            raise NumericalError(f"{kind} suite failed: {e}") from e
        reports.append({"kind": kind, "report": rep})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(suites.canonical_json({"suites": reports}))
    return EXIT_OK


def cmd_generate(args) -> int:
    """Synthetic layer: Gaussian W and factor-model activations X."""
    rng = np.random.default_rng(args.seed)
    w = rng.standard_normal((args.d_out, args.d_in))
    x = suites.factor_activations(args.d_in, args.n, rng, rank=args.rank)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_awpt(out / "W.awpt", w)
    save_awpt(out / "X.awpt", x)
    save_awpt(out / "C.awpt", covariance(x).matrix)
    return EXIT_OK


def cmd_run(args) -> int:
    """Execute a JSON job manifest by translating it into flags."""
    try:
        spec = json.loads(Path(args.manifest).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read manifest: {e}") from e
    if not isinstance(spec, dict) or "command" not in spec:
        raise InputError("manifest must be an object with a 'command' field")
    argv = [str(spec.pop("command"))]
    for key, value in spec.items():
        flag = "--" + key.replace("_", "-")
        if value is True:
            argv.append(flag)
        elif isinstance(value, list):
            argv += [flag, *map(str, value)]
        elif value is not None and value is not False:
            argv += [flag, str(value)]
    if argv[0] == "run":
        raise InputError("manifests cannot nest")
    return _dispatch(build_parser().parse_args(argv))


def _manifest(args, command) -> JobManifest:
    job = JobManifest(command=command, weights=args.weights, acts=args.acts, cov=args.cov, out=Path(args.out),
                      seed=args.seed)
    job.validate()
    return job


def _add_io(p):
    p.add_argument("--weights", type=Path, help="weight matrix (AWPT or .npy), d_out x d_in")
    p.add_argument("--acts", type=Path, help="calibration activations X, d_in x n")
    p.add_argument("--cov", type=Path, help="precomputed covariance C = X X^T / n, d_in x d_in")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=0)


def _add_compress(p, with_mode: bool):
    if with_mode:
        p.add_argument("--mode", required=True, choices=("prune", "quantize", "joint"))
    _add_io(p)
    p.add_argument("--ratio", type=float, help="fraction of each row to prune")
    p.add_argument("--keep", type=int, help="entries kept per row (overrides --ratio)")
    p.add_argument("--bits", type=int)
    p.add_argument("--group", type=int, help="quantization group size")
    p.add_argument("--eta-rule", help="frob:c | explicit:v | safe")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--tol", type=float, help="stop when ||grad||_F / ||W||_F falls below this")
    p.add_argument("--init", choices=("wanda", "magnitude", "rtn", "original_weight"))
    p.add_argument("--joint-order", choices=(PRUNE_THEN_QUANT, QUANT_THEN_PRUNE))
    p.add_argument("--schedule", type=int, nargs=3, metavar=("TOTAL", "PRUNE_ONLY", "RAMP"))
    p.add_argument("--freeze-grid", action="store_true")
    p.add_argument("--dtype", choices=("float32", "float64"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="awp", description="Activation-aware pruning and quantization.")
    sub = ap.add_subparsers(dest="command", required=True)
    _add_compress(sub.add_parser("compress", help="run AWP in the given --mode"), True)
    for mode in ("prune", "quantize", "joint"):
        _add_compress(sub.add_parser(mode, help=f"shorthand for compress --mode {mode}"), False)
    b = sub.add_parser("baseline", help="closed-form comparison compressors")
    _add_compress(b, False)
    b.add_argument("--method", required=True, choices=BASELINES)
    o = sub.add_parser("oracle-compare", help="per-row losses against the exhaustive optimum")
    _add_compress(o, False)
    be = sub.add_parser("bench", help="run seeded experiment suites")
    be.add_argument("--suite", help="JSON list of suite objects (default: recovery + oracle)")
    be.add_argument("--out", default="out")
    be.add_argument("--seed", type=int, default=0)
    g = sub.add_parser("generate", help="write a synthetic layer (W, X, C)")
    g.add_argument("--out", default="out")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--d-out", type=int, default=64)
    g.add_argument("--d-in", type=int, default=128)
    g.add_argument("--n", type=int, default=1024)
    g.add_argument("--rank", type=int, default=8)
    r = sub.add_parser("run", help="execute a JSON job manifest")
    r.add_argument("manifest")
    return ap


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "compress":
        return cmd_compress(args, args.mode)
    if cmd in ("prune", "quantize", "joint"):
        return cmd_compress(args, cmd)
    return {
        "baseline": cmd_baseline,
        "oracle-compare": cmd_oracle_compare,
        "bench": cmd_bench,
        "generate": cmd_generate,
        "run": cmd_run,
    }[cmd](args)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except NumericalError as e:
        print(f"awp: numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ConfigError, ShapeError, FormatError, ValueError, OSError) as e:
        print(f"awp: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
