"""Layer-wise comparison compressors: magnitude, Wanda, RTN, AWQ-lite and
the sequential Wanda/AWQ-lite pipelines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .projections import (
    PRUNE_THEN_QUANT,
    QUANT_THEN_PRUNE,
    QuantGrid,
    QuantSpec,
    RowSparsitySpec,
    fit_quant_grid,
    project_row_sparse,
    quantize_to_grid,
)
from .tensor import Covariance, ShapeError, as_matrix

__all__ = [
    "ActivationNorms",
    "magnitude_prune",
    "wanda_prune",
    "rtn_quantize",
    "awq_lite_quantize",
    "sequential_pipeline",
]


@dataclass(frozen=True, eq=False)
class ActivationNorms:
    """Per-input-channel statistics of the calibration activations.

    ``l2_row_norms[j] = ||X[j, :]||_2`` drives Wanda; ``l1_mean_norms[j] =
    ||X[j, :]||_1 / n`` drives AWQ-lite.  ``l1_mean_norms`` is ``None`` when
    only a covariance is available.
    """

    l2_row_norms: np.ndarray
    l1_mean_norms: np.ndarray | None = None

    def __post_init__(self):
        for v in (self.l2_row_norms, self.l1_mean_norms):
            if v is not None and (v.ndim != 1 or np.any(v < 0) or not np.all(np.isfinite(v))):
                raise ValueError("activation norms must be finite, non-negative vectors")
        if self.l1_mean_norms is not None and self.l1_mean_norms.shape != self.l2_row_norms.shape:
            raise ShapeError("l2 and l1 norm vectors differ in length")

    @property
    def d_in(self) -> int:
        return self.l2_row_norms.shape[0]

    @classmethod
    def from_activations(cls, x) -> "ActivationNorms":
        x = as_matrix(x, name="activations")
        n = x.shape[1]
        return cls(np.sqrt(np.sum(x * x, axis=1)), np.sum(np.abs(x), axis=1) / n)

    @classmethod
    def from_covariance(cls, cov: Covariance) -> "ActivationNorms":
        # ||X[j,:]||_2^2 = C_jj (times n when C was normalized)
        diag = np.clip(np.diag(cov.matrix).astype(np.float64), 0.0, None)
        if cov.normalized:
            diag = diag * cov.sample_count
        return cls(np.sqrt(diag))

    @classmethod
    def uniform(cls, d_in: int, value: float = 1.0) -> "ActivationNorms":
        v = np.full(d_in, float(value))
        return cls(v, v.copy())


def _check_len(w: np.ndarray, norms: ActivationNorms):
    if norms.d_in != w.shape[1]:
        raise ShapeError(f"{norms.d_in} activation norms for {w.shape[1]} input columns")


def magnitude_prune(w, spec: RowSparsitySpec | int):
    """Per-row magnitude pruning; identical to the row-sparse projection."""
    return project_row_sparse(np.asarray(w), spec)


def wanda_prune(w, norms: ActivationNorms, spec: RowSparsitySpec | int):
    """Mask from per-row top-k of ``|W| * ||X_j||``; keeps unscaled weights."""
    w = np.asarray(w)
    _check_len(w, norms)
    _, mask = project_row_sparse(np.abs(w) * norms.l2_row_norms, spec)
    return np.where(mask, w, np.zeros((), dtype=w.dtype)), mask


def rtn_quantize(w, qspec: QuantSpec) -> tuple[np.ndarray, QuantGrid]:
    w = np.asarray(w)
    grid = fit_quant_grid(w, qspec)
    return quantize_to_grid(w, grid), grid


def awq_lite_quantize(w, norms: ActivationNorms, qspec: QuantSpec, exponent: float = 0.5):
    """RTN on ``W diag(s)`` with ``s_j = (||X_j||_1 / n) ** exponent``.

    Returns ``(theta, grid, scales)``; ``theta * scales`` lies on ``grid``.
    Dead channels (zero norm) get unit scale.
    """
    w = np.asarray(w, dtype=np.float64)
    _check_len(w, norms)
    if norms.l1_mean_norms is None:
        raise ValueError("AWQ-lite needs l1 activation norms (pass activations, not a covariance)")
    if not 0.0 <= exponent <= 1.0:
        raise ValueError(f"exponent must lie in [0, 1], got {exponent}")
    s = np.power(norms.l1_mean_norms, exponent)
    s = np.where(s == 0.0, 1.0, s)
    q, grid = rtn_quantize(w * s, qspec)
    return q / s, grid, s


def sequential_pipeline(w, norms: ActivationNorms, spec: RowSparsitySpec | int, qspec: QuantSpec,
                        order: str = PRUNE_THEN_QUANT, cov: Covariance | None = None,
                        exponent: float = 0.5):
    """Wanda then AWQ-lite (``prune_then_quant``) or the reverse.

    Returns a :class:`~awp.engine.CompressionResult` with a single trace
    record (evaluated when ``cov`` is given).
    """
    from .engine import CompressionResult, LossTrace

    w = np.asarray(w, dtype=np.float64)
    if order == PRUNE_THEN_QUANT:
        pruned, mask = wanda_prune(w, norms, spec)
        q, grid, scales = awq_lite_quantize(pruned, norms, qspec, exponent)
        theta = np.where(mask, q, 0.0)
    elif order == QUANT_THEN_PRUNE:
        q, grid, scales = awq_lite_quantize(w, norms, qspec, exponent)
        theta, mask = wanda_prune(q, norms, spec)
    else:
        raise ValueError(f"unknown order {order!r}")
    trace = LossTrace()
    if cov is not None:
        trace.record(0, w, theta, cov, spec_ratio(spec, w.shape[1]))
    return CompressionResult(theta=theta, mask=mask, grid=grid, trace=trace, iterations_run=0,
                             stop_reason="closed_form", column_scales=scales)


def spec_ratio(spec: RowSparsitySpec | int, d_in: int) -> float:
    k = spec if isinstance(spec, (int, np.integer)) else spec.k
    return 1.0 - k / d_in if d_in else 0.0
