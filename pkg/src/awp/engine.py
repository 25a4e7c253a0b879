"""Activation-aware projected gradient descent.

Each iteration takes a gradient step on ``||(W - Θ) C^{1/2}||_F^2`` and
projects back onto the constraint set::

    Z     = Θ + eta * (W - Θ) C
    Θ_new = Proj(Z)

``C^{1/2}`` is never formed.  Pruning projects with per-row hard
thresholding, quantization with a refit min-max grid, and joint mode first
ramps the pruning ratio up before switching to the composed projection.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .baselines import ActivationNorms, magnitude_prune, rtn_quantize, wanda_prune
from .projections import (
    ORDERS,
    PRUNE_THEN_QUANT,
    QuantGrid,
    QuantSpec,
    RowSparsitySpec,
    fit_quant_grid,
    project_joint,
    project_row_sparse,
    quantize_to_grid,
)
from .tensor import Covariance, NumericalError, ShapeError, as_matrix, frobenius, rowwise_product

__all__ = [
    "ConfigError",
    "DivergenceError",
    "StepRule",
    "RampSchedule",
    "CompressionConfig",
    "LossTrace",
    "CompressionResult",
    "pgd_step",
    "step_size",
    "initialize",
    "run",
]

MODES = ("prune", "quantize", "joint")
INITS = ("wanda", "rtn", "magnitude", "original_weight", "provided")


class ConfigError(ValueError):
    pass


class DivergenceError(NumericalError):
    pass


@dataclass(frozen=True)
class StepRule:
    """``frob``: eta = value / ||C||_F; ``explicit``: eta = value;
    ``safe``: eta = 1 / lambda_max(C)."""

    kind: str = "frob"
    value: float = 2.0

    def __post_init__(self):
        if self.kind not in ("frob", "explicit", "safe"):
            raise ConfigError(f"unknown step rule {self.kind!r}")
        if self.kind != "safe" and not self.value > 0:
            raise ConfigError("step-size constant must be positive")

    @classmethod
    def parse(cls, text: str) -> "StepRule":
        """Parse ``frob:c``, ``explicit:v`` or ``safe``."""
        kind, _, val = text.partition(":")
        if kind == "safe":
            return cls("safe", 1.0)
        try:
            return cls(kind, float(val))
        except ValueError:
            raise ConfigError(f"bad step rule {text!r}") from None

    def describe(self) -> str:
        if self.kind == "frob":
            return f"{self.value:g}/||C||_F"
        if self.kind == "explicit":
            return f"{self.value:g}"
        return "1/lambda_max(C)"


@dataclass(frozen=True)
class RampSchedule:
    """Joint-mode schedule: prune only for ``prune_only_iters`` iterations,
    ramping the ratio linearly over the first ``ramp_iters``, then run
    joint projections until ``total_iters``."""

    total_iters: int = 100
    prune_only_iters: int = 50
    ramp_iters: int = 25

    def __post_init__(self):
        if not 0 <= self.ramp_iters <= self.prune_only_iters <= self.total_iters:
            raise ConfigError("need ramp_iters <= prune_only_iters <= total_iters")

    def ratio(self, t: int, target: float) -> float:
        if self.ramp_iters == 0:
            return target if t >= 1 else 0.0
        return target * min(t / self.ramp_iters, 1.0)

    def keep(self, t: int, d_in: int, target: RowSparsitySpec) -> int:
        """Per-row survivors at iteration ``t``; rounds up mid-ramp so the ramp
        never over-prunes, and lands exactly on ``target.k``."""
        if t >= self.ramp_iters:
            return target.k
        raw = (1.0 - self.ratio(t, target.ratio)) * d_in
        return max(target.k, min(d_in, math.ceil(raw - 1e-9)))


@dataclass(frozen=True)
class CompressionConfig:
    mode: str = "prune"
    ratio: float | None = None
    keep: int | None = None
    qspec: QuantSpec | None = None
    step_rule: StepRule = field(default_factory=StepRule)
    max_iters: int = 200
    grad_tol: float = 1e-4
    init: str = "wanda"
    schedule: RampSchedule = field(default_factory=RampSchedule)
    joint_order: str = PRUNE_THEN_QUANT
    freeze_grid: bool = False
    stop_on_fixed_point: bool = True
    divergence_factor: float = 1e6
    dtype: str = "float64"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode in ("prune", "joint") and (self.ratio is None) == (self.keep is None):
            raise ConfigError(f"{self.mode} mode needs exactly one of ratio / keep")
        if self.ratio is not None and not 0.0 <= self.ratio <= 1.0:
            raise ConfigError(f"ratio must lie in [0, 1], got {self.ratio}")
        if self.keep is not None and self.keep < 0:
            raise ConfigError(f"keep must be non-negative, got {self.keep}")
        if self.mode in ("quantize", "joint") and self.qspec is None:
            raise ConfigError(f"{self.mode} mode needs a quantization spec")
        if self.init not in INITS:
            raise ConfigError(f"unknown init {self.init!r}")
        if self.init in ("wanda", "magnitude") and self.mode == "quantize":
            raise ConfigError(f"{self.init} init needs a sparsity spec")
        if self.init == "rtn" and self.mode == "prune":
            raise ConfigError("rtn init needs a quantization spec")
        if not self.grad_tol > 0:
            raise ConfigError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if self.joint_order not in ORDERS:
            raise ConfigError(f"unknown joint order {self.joint_order!r}")
        if self.mode == "joint" and self.schedule.prune_only_iters >= self.schedule.total_iters:
            raise ConfigError("joint schedule needs at least one joint iteration")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    # defaults of the three compression protocols
    @classmethod
    def pruning(cls, ratio=None, keep=None, **kw) -> "CompressionConfig":
        kw.setdefault("step_rule", StepRule("frob", 2.0))
        kw.setdefault("max_iters", 200)
        kw.setdefault("grad_tol", 1e-4)
        kw.setdefault("init", "wanda")
        return cls(mode="prune", ratio=ratio, keep=keep, **kw)

    @classmethod
    def quantization(cls, bits=4, group_size=128, **kw) -> "CompressionConfig":
        kw.setdefault("step_rule", StepRule("frob", 1.5))
        kw.setdefault("max_iters", 10)
        kw.setdefault("init", "rtn")
        return cls(mode="quantize", qspec=QuantSpec(bits, group_size), **kw)

    @classmethod
    def joint(cls, ratio=None, keep=None, bits=4, group_size=128, **kw) -> "CompressionConfig":
        kw.setdefault("step_rule", StepRule("frob", 1.5))
        kw.setdefault("init", "original_weight")
        sched = kw.setdefault("schedule", RampSchedule())
        kw["max_iters"] = sched.total_iters
        return cls(mode="joint", ratio=ratio, keep=keep, qspec=QuantSpec(bits, group_size), **kw)

    def row_spec(self, d_in: int) -> RowSparsitySpec | None:
        if self.keep is not None:
            return RowSparsitySpec(self.keep, d_in)
        if self.ratio is not None:
            return RowSparsitySpec.from_ratio(self.ratio, d_in)
        return None

    def echo(self) -> dict:
        out = asdict(self)
        out["step_rule"] = self.step_rule.describe()
        out["eta_rule"] = self.step_rule.describe()
        return out


@dataclass
class LossTrace:
    """Per-iteration ``(iter, normalized_loss, grad_norm, ratio)`` records,
    with losses and gradients normalized by ``||W||_F``."""

    iters: list = field(default_factory=list)
    normalized_loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    ratio: list = field(default_factory=list)

    def __len__(self):
        return len(self.iters)

    def append(self, it, loss, grad, ratio):
        self.iters.append(int(it))
        self.normalized_loss.append(float(loss))
        self.grad_norm.append(float(grad))
        self.ratio.append(float(ratio))

    def record(self, it, w, theta, cov: Covariance, ratio):
        d = np.asarray(w, dtype=np.float64) - theta
        g = rowwise_product(d, np.asarray(cov.matrix, dtype=np.float64))
        loss, grad = _normalized(d, g, frobenius(w))
        self.append(it, loss, grad, ratio)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iter", "normalized_loss", "grad_norm", "ratio"])
        for row in zip(self.iters, self.normalized_loss, self.grad_norm, self.ratio):
            writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
        return buf.getvalue()


@dataclass
class CompressionResult:
    theta: np.ndarray
    mask: np.ndarray | None
    grid: QuantGrid | None
    trace: LossTrace
    iterations_run: int
    stop_reason: str
    column_scales: np.ndarray | None = None
    eta: float | None = None
    wall_time_ms: float = 0.0


def _normalized(d, g, w_norm):
    tr = float(np.add.reduce(np.ravel(g * d)))
    denom = w_norm if w_norm > 0 else 1.0
    return math.sqrt(max(tr, 0.0)) / denom, frobenius(g) / denom


def pgd_step(theta, w, cov: Covariance, eta: float) -> np.ndarray:
    """``Z = Θ + eta (W - Θ) C``."""
    theta = np.asarray(theta)
    w = np.asarray(w)
    if theta.shape != w.shape or w.shape[1] != cov.dim:
        raise ShapeError("Theta, W and C have incompatible shapes")
    if not eta > 0:
        raise ConfigError("step size must be positive")
    z = theta + eta * rowwise_product(w - theta, cov.matrix)
    if not np.all(np.isfinite(z)):
        raise NumericalError("gradient step produced non-finite values")
    return z


def step_size(cov: Covariance, rule: StepRule) -> float:
    if rule.kind == "explicit":
        return rule.value
    if cov.frob == 0.0:
        raise NumericalError("step size undefined for a zero covariance")
    if rule.kind == "frob":
        return rule.value / cov.frob
    return 1.0 / cov.spectrum.lambda_max


def initialize(w, cfg: CompressionConfig, norms: ActivationNorms | None = None, theta0=None) -> np.ndarray:
    """Starting iterate for ``cfg.init``."""
    w = np.asarray(w)
    d_in = w.shape[1]
    spec = cfg.row_spec(d_in)
    if cfg.init == "original_weight":
        return w.copy()
    if cfg.init == "wanda":
        if norms is None:
            raise ConfigError("wanda init needs activation norms")
        return wanda_prune(w, norms, spec)[0]
    if cfg.init == "magnitude":
        return magnitude_prune(w, spec)[0]
    if cfg.init == "rtn":
        return rtn_quantize(w, cfg.qspec)[0]
    if theta0 is None:
        raise ConfigError("provided init needs a starting matrix")
    theta0 = as_matrix(theta0, dtype=w.dtype, name="initial iterate")
    if theta0.shape != w.shape:
        raise ShapeError(f"initial iterate {theta0.shape} does not match W {w.shape}")
    if cfg.mode == "prune" and np.any(np.count_nonzero(theta0, axis=1) > spec.k):
        raise ConfigError(f"initial iterate has rows with more than {spec.k} nonzeros")
    if cfg.mode == "quantize":
        # feasible only if no group uses more distinct values than levels
        g = cfg.qspec.group_size
        for row in theta0:
            for j in range(0, d_in, g):
                if np.unique(row[j:j + g]).size > cfg.qspec.levels:
                    raise ConfigError("initial iterate has more distinct values per group than levels")
    return theta0.copy()


def run(
    w,
    cov: Covariance,
    cfg: CompressionConfig,
    norms: ActivationNorms | None = None,
    theta0=None,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> CompressionResult:
    """Compress ``w`` against ``cov`` following ``cfg``.

    ``callback(t, theta)`` sees every iterate, including ``t = 0``.
    """
    start = time.perf_counter()
    dtype = np.dtype(cfg.dtype)
    w = as_matrix(w, dtype=dtype, name="weights")
    cov = cov.normalized_form()
    if cov.dim != w.shape[1]:
        raise ShapeError(f"covariance dim {cov.dim} != W columns {w.shape[1]}")
    c = np.asarray(cov.matrix, dtype=dtype)
    d_in = w.shape[1]
    spec = cfg.row_spec(d_in)
    eta = step_size(cov, cfg.step_rule)
    w_norm = frobenius(w)

    theta = initialize(w, cfg, norms, theta0).astype(dtype, copy=False)
    mask = None
    grid = fit_quant_grid(w, cfg.qspec) if cfg.mode == "quantize" and cfg.init == "rtn" else None
    # a frozen quantize-mode grid is the RTN grid of W when starting from RTN,
    # otherwise the first grid fitted inside the loop
    frozen: QuantGrid | None = grid if cfg.freeze_grid else None

    def ratio_at(t):
        if cfg.mode == "prune":
            return spec.ratio
        if cfg.mode == "joint":
            return cfg.schedule.ratio(t, spec.ratio)
        return 0.0

    trace = LossTrace()
    d = w - theta
    g = rowwise_product(d, c)
    loss0, grad0 = _normalized(d, g, w_norm)
    trace.append(0, loss0, grad0, ratio_at(0))
    if callback is not None:
        callback(0, theta)
    # divergence is judged against the larger of the initial loss and the
    # loss of the all-zero matrix, so a dense start (loss 0) is not flagged
    ref = max(loss0, _normalized(w, rowwise_product(w, c), w_norm)[0])

    stop = "max_iters"
    t = 0
    for t in range(1, cfg.max_iters + 1):
        z = theta + eta * g
        if not np.all(np.isfinite(z)):
            raise NumericalError(f"non-finite iterate at iteration {t}")
        stationary_projection = cfg.mode == "prune"
        if cfg.mode == "prune":
            new, mask = project_row_sparse(z, spec)
        elif cfg.mode == "quantize":
            grid = frozen if frozen is not None else fit_quant_grid(z, cfg.qspec)
            if cfg.freeze_grid:
                frozen = grid
            new = quantize_to_grid(z, grid)
        elif t <= cfg.schedule.prune_only_iters:
            new, mask = project_row_sparse(z, cfg.schedule.keep(t, d_in, spec))
        else:
            new, mask, grid = project_joint(z, spec, cfg.qspec, cfg.joint_order, grid=frozen)
            if cfg.freeze_grid:
                frozen = grid
            stationary_projection = True
        new = new.astype(dtype, copy=False)
        fixed = np.array_equal(new, theta)
        theta = new
        d = w - theta
        g = rowwise_product(d, c)
        loss, grad = _normalized(d, g, w_norm)
        trace.append(t, loss, grad, ratio_at(t))
        if callback is not None:
            callback(t, theta)
        if not math.isfinite(loss) or loss > cfg.divergence_factor * ref:
            raise DivergenceError(
                f"normalized loss {loss:.3e} at iteration {t} exceeds "
                f"{cfg.divergence_factor:g}x reference {ref:.3e} (eta={eta:.3e})"
            )
        if cfg.mode == "prune" and grad < cfg.grad_tol:
            stop = "tolerance"
            break
        if cfg.stop_on_fixed_point and fixed and stationary_projection and cfg.mode != "quantize":
            stop = "fixed_point"
            break

    if cfg.mode == "joint":
        theta = np.where(mask, theta, np.zeros((), dtype=dtype))
    return CompressionResult(
        theta=theta, mask=mask, grid=grid, trace=trace, iterations_run=t,
        stop_reason=stop, eta=eta, wall_time_ms=(time.perf_counter() - start) * 1e3,
    )
