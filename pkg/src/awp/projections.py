"""Projections onto the compression constraint sets.

* row-wise hard thresholding (keep the ``k`` largest magnitudes per row),
* grouped asymmetric min-max uniform quantization,
* their composition for joint pruning + quantization.

All functions are pure and deterministic; ties in magnitude go to the lower
column index and integer codes round half away from zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

__all__ = [
    "RowSparsitySpec",
    "QuantSpec",
    "QuantGrid",
    "round_half_away",
    "project_row_sparse",
    "fit_quant_grid",
    "quantize_to_grid",
    "project_joint",
    "mask_row_counts",
    "on_grid",
]

PRUNE_THEN_QUANT = "prune_then_quant"
QUANT_THEN_PRUNE = "quant_then_prune"
ORDERS = (PRUNE_THEN_QUANT, QUANT_THEN_PRUNE)


def keep_count(ratio: float, d_in: int) -> int:
    """Entries kept per row for pruning ratio ``ratio``, rounded half up."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"pruning ratio must lie in [0, 1], got {ratio}")
    return int(math.floor((1.0 - ratio) * d_in + 0.5))


@dataclass(frozen=True)
class RowSparsitySpec:
    """Per-row sparsity budget: ``k`` survivors in each of ``d_in`` columns."""

    k: int
    d_in: int

    def __post_init__(self):
        if self.d_in < 0:
            raise ValueError("d_in must be non-negative")
        if not 0 <= self.k <= self.d_in:
            raise ValueError(f"keep count k={self.k} outside [0, {self.d_in}]")

    @classmethod
    def from_ratio(cls, ratio: float, d_in: int) -> "RowSparsitySpec":
        return cls(keep_count(ratio, d_in), d_in)

    @property
    def ratio(self) -> float:
        return 1.0 - self.k / self.d_in if self.d_in else 0.0


@dataclass(frozen=True)
class QuantSpec:
    bits: int = 4
    group_size: int = 128

    def __post_init__(self):
        if self.bits < 2:
            raise ValueError(f"need at least 2 bits, got {self.bits}")
        if self.group_size < 1:
            raise ValueError(f"group size must be positive, got {self.group_size}")

    @property
    def levels(self) -> int:
        return 2 ** self.bits

    def n_groups(self, d_in: int) -> int:
        return -(-d_in // self.group_size)


@dataclass(frozen=True, eq=False)
class QuantGrid:
    """Per (row, group) uniform grid ``scale * (q - zero_point)``.

    ``constants`` holds the reconstruction value of groups whose range is
    empty (``scale == 0``); it is ignored elsewhere.
    """

    bits: int
    group_size: int
    scales: np.ndarray
    zero_points: np.ndarray
    constants: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.scales.shape

    def expand(self, d_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-entry (scale, zero_point, constant) arrays for ``d_in`` columns."""
        idx = np.arange(d_in) // self.group_size
        return self.scales[:, idx], self.zero_points[:, idx], self.constants[:, idx]

    def levels(self, row: int, group: int) -> np.ndarray:
        """All representable values of one group."""
        s = self.scales[row, group]
        if s == 0.0:
            return np.array([self.constants[row, group]])
        q = np.arange(2 ** self.bits, dtype=np.float64)
        return s * (q - self.zero_points[row, group])

    def to_json(self) -> dict:
        return {
            "bits": self.bits,
            "group_size": self.group_size,
            "scales": self.scales.tolist(),
            "zero_points": self.zero_points.astype(int).tolist(),
            "constants": self.constants.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "QuantGrid":
        scales = np.asarray(obj["scales"], dtype=np.float64)
        zps = np.asarray(obj["zero_points"], dtype=np.float64)
        consts = np.asarray(obj.get("constants", np.zeros_like(scales)), dtype=np.float64)
        if scales.shape != zps.shape or scales.shape != consts.shape:
            raise ShapeError("grid arrays disagree in shape")
        return cls(int(obj["bits"]), int(obj["group_size"]), scales, zps, consts)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to the nearest integer, ties away from zero (exact in floating point)."""
    x = np.asarray(x)
    whole = np.trunc(x)
    frac = x - whole
    return whole + np.where(np.abs(frac) >= 0.5, np.sign(x), 0.0)


def project_row_sparse(z: np.ndarray, spec: RowSparsitySpec | int) -> tuple[np.ndarray, np.ndarray]:
    """Keep the ``k`` largest-magnitude entries of each row, zero the rest.

    Returns ``(theta, mask)``; kept entries are copied bit-for-bit.

    >>> project_row_sparse(np.array([[3.0, -1.0, 2.0]]), 2)[0]
    array([[3., 0., 2.]])
    """
    z = np.asarray(z)
    if z.ndim != 2:
        raise ShapeError("expected a 2-D matrix")
    k = spec if isinstance(spec, (int, np.integer)) else spec.k
    if not isinstance(spec, (int, np.integer)) and spec.d_in != z.shape[1]:
        raise ShapeError(f"spec is for d_in={spec.d_in}, matrix has {z.shape[1]} columns")
    if not 0 <= k <= z.shape[1]:
        raise ValueError(f"keep count k={k} outside [0, {z.shape[1]}]")
    mask = np.zeros(z.shape, dtype=bool)
    if k > 0:
        # stable sort on -|z| puts equal magnitudes in column order
        order = np.argsort(-np.abs(z), axis=1, kind="stable")[:, :k]
        np.put_along_axis(mask, order, True, axis=1)
    theta = np.where(mask, z, np.zeros((), dtype=z.dtype))
    return theta, mask


def _grouped(z: np.ndarray, group_size: int, fill: float) -> np.ndarray:
    rows, d_in = z.shape
    n_groups = -(-d_in // group_size)
    padded = np.full((rows, n_groups * group_size), fill, dtype=np.float64)
    padded[:, :d_in] = z
    return padded.reshape(rows, n_groups, group_size)


def fit_quant_grid(z: np.ndarray, spec: QuantSpec) -> QuantGrid:
    """Asymmetric min-max grid for every contiguous group of each row."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError("expected a 2-D matrix")
    lo = np.min(_grouped(z, spec.group_size, np.inf), axis=2)
    hi = np.max(_grouped(z, spec.group_size, -np.inf), axis=2)
    top = spec.levels - 1
    scales = (hi - lo) / top
    const = scales == 0.0
    safe = np.where(const, 1.0, scales)
    zps = np.clip(round_half_away(-lo / safe), 0, top)
    zps = np.where(const, 0.0, zps)
    constants = np.where(const, lo, 0.0)
    return QuantGrid(spec.bits, spec.group_size, scales, zps, constants)


def quantize_to_grid(z: np.ndarray, grid: QuantGrid) -> np.ndarray:
    """Map every entry to its nearest grid value."""
    z = np.asarray(z)
    rows, d_in = z.shape
    if grid.shape != (rows, -(-d_in // grid.group_size)):
        raise ShapeError(f"grid shape {grid.shape} does not fit matrix {z.shape}")
    scale, zp, const = grid.expand(d_in)
    flat = scale == 0.0
    safe = np.where(flat, 1.0, scale)
    q = np.clip(round_half_away(z / safe) + zp, 0, 2 ** grid.bits - 1)
    out = np.where(flat, const, scale * (q - zp))
    return out.astype(z.dtype, copy=False)


def project_joint(
    z: np.ndarray,
    row_spec: RowSparsitySpec | int,
    qspec: QuantSpec,
    order: str = PRUNE_THEN_QUANT,
    grid: QuantGrid | None = None,
) -> tuple[np.ndarray, np.ndarray, QuantGrid]:
    """Project onto row-sparse and quantized matrices.

    ``prune_then_quant`` thresholds first, fits the grid on the pruned matrix,
    quantizes, then re-applies the mask.  ``quant_then_prune`` quantizes ``z``
    and thresholds the result.  Passing ``grid`` reuses it instead of
    refitting.
    """
    if order == PRUNE_THEN_QUANT:
        pruned, mask = project_row_sparse(z, row_spec)
        if grid is None:
            grid = fit_quant_grid(pruned, qspec)
        theta = np.where(mask, quantize_to_grid(pruned, grid), 0.0).astype(pruned.dtype, copy=False)
    elif order == QUANT_THEN_PRUNE:
        if grid is None:
            grid = fit_quant_grid(z, qspec)
        theta, mask = project_row_sparse(quantize_to_grid(z, grid), row_spec)
    else:
        raise ValueError(f"unknown projection order {order!r}")
    return theta, mask, grid


def mask_row_counts(mask: np.ndarray) -> np.ndarray:
    return np.count_nonzero(mask, axis=1)


def on_grid(theta: np.ndarray, grid: QuantGrid, allow_zero: bool = False) -> bool:
    """True when every entry of ``theta`` is exactly representable on ``grid``."""
    theta = np.asarray(theta, dtype=np.float64)
    ok = quantize_to_grid(theta, grid) == theta
    if allow_zero:
        ok |= theta == 0.0
    return bool(np.all(ok))
