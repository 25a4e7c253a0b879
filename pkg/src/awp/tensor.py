"""Dense-matrix helpers: covariance construction, norms, spectral bounds and
the activation-aware loss.

Matrices are plain 2-D ``numpy`` arrays.  Everything here is deterministic:
reductions go through numpy's fixed pairwise summation and the power
iterations start from a fixed vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "NumericalError",
    "ShapeError",
    "ConvergenceError",
    "CovarianceError",
    "Covariance",
    "SpectralSummary",
    "as_matrix",
    "covariance",
    "frobenius",
    "activation_loss",
    "spectral_extremes",
    "rowwise_product",
]


class NumericalError(ArithmeticError):
    """Non-finite values or divergence."""


class ConvergenceError(NumericalError):
    pass


class CovarianceError(ValueError):
    """A supplied covariance is not symmetric positive semidefinite."""


class ShapeError(ValueError):
    pass


def as_matrix(a, dtype=np.float64, name="matrix") -> np.ndarray:
    """Validate ``a`` as a finite 2-D array of ``dtype``."""
    m = np.asarray(a, dtype=dtype)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"{name} contains non-finite values")
    return m


def frobenius(m: np.ndarray) -> float:
    """Frobenius norm, rescaled by the max entry so large inputs do not
    overflow during squaring."""
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    if not np.all(np.isfinite(m)):
        raise NumericalError("frobenius of non-finite matrix")
    peak = float(np.max(np.abs(m)))
    if peak == 0.0:
        return 0.0
    scaled = np.ravel(m / peak)
    out = peak * math.sqrt(float(np.add.reduce(scaled * scaled)))
    if not math.isfinite(out):
        raise NumericalError("frobenius overflowed")
    return out


@dataclass(frozen=True)
class SpectralSummary:
    lambda_min: float
    lambda_max: float
    frob_norm: float
    kappa: float


@dataclass(frozen=True, eq=False)
class Covariance:
    """Input-activation covariance ``X Xᵀ`` (``normalized`` divides by n).

    Construct through :func:`covariance` or :meth:`from_matrix`; both check
    symmetry and positive semidefiniteness.
    """

    matrix: np.ndarray
    sample_count: int
    normalized: bool

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_matrix(cls, c, *, normalized=True, sample_count=1, validate=True):
        dtype = np.float32 if np.asarray(c).dtype == np.float32 else np.float64
        c = as_matrix(c, dtype=dtype, name="covariance")
        if c.shape[0] != c.shape[1]:
            raise ShapeError(f"covariance must be square, got {c.shape}")
        c.setflags(write=False)
        cov = cls(matrix=c, sample_count=int(sample_count), normalized=bool(normalized))
        if validate:
            cov.validate()
        return cov

    def validate(self):
        c = self.matrix
        scale = frobenius(c)
        if not np.allclose(c, c.T, rtol=1e-10, atol=1e-10 * max(scale, 1e-300)):
            raise CovarianceError("covariance is not symmetric")
        if scale == 0.0:
            return
        # Cholesky of the shifted matrix succeeds iff every eigenvalue
        # exceeds -1e-8 * ||C||_F (which bounds lambda_max from above).
        shifted = c.astype(np.float64) + 1e-8 * scale * np.eye(self.dim)
        try:
            np.linalg.cholesky(shifted)
        except np.linalg.LinAlgError:
            raise CovarianceError("covariance is not positive semidefinite") from None

    def normalized_form(self) -> "Covariance":
        if self.normalized:
            return self
        return Covariance.from_matrix(
            self.matrix / self.sample_count, normalized=True,
            sample_count=self.sample_count, validate=False,
        )

    @cached_property
    def frob(self) -> float:
        return frobenius(self.matrix)

    @cached_property
    def spectrum(self) -> SpectralSummary:
        return spectral_extremes(self)


def covariance(x, normalize: bool = True, dtype=np.float64) -> Covariance:
    """Covariance of activations ``x`` (d_in x n).

    >>> covariance([[1.0, 2.0], [0.0, 1.0]], normalize=False).matrix
    array([[5., 2.],
           [2., 1.]])
    """
    x = as_matrix(x, dtype=dtype, name="activations")
    if x.shape[1] < 1 or x.shape[0] < 1:
        raise ShapeError("activations must have at least one row and one sample")
    n = x.shape[1]
    gram = x @ x.T
    if normalize:
        gram = gram / n
    # mirror the upper triangle so the result is exactly symmetric
    upper = np.triu(gram)
    c = upper + np.triu(gram, 1).T
    if not np.all(np.isfinite(c)):
        raise NumericalError("covariance overflowed")
    c.setflags(write=False)
    return Covariance(matrix=c, sample_count=n, normalized=normalize)


def rowwise_product(d: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``d @ c`` computed one row at a time.

    Each output row is a vector-matrix product whose reduction order does not
    depend on how many rows are stacked, so a single row processed alone
    gives bit-identical results.
    """
    out = np.empty((d.shape[0], c.shape[1]), dtype=np.result_type(d, c))
    for i in range(d.shape[0]):
        out[i] = d[i] @ c
    return out


def activation_loss(w, theta, cov: Covariance) -> float:
    """``||(W - Θ) C^{1/2}||_F`` evaluated as ``sqrt(tr[(W-Θ) C (W-Θ)ᵀ])``."""
    w = np.asarray(w)
    theta = np.asarray(theta)
    if w.shape != theta.shape:
        raise ShapeError(f"W {w.shape} and Theta {theta.shape} differ in shape")
    if w.ndim != 2 or w.shape[1] != cov.dim:
        raise ShapeError(f"W has {w.shape[-1]} columns, covariance dim is {cov.dim}")
    d = w - theta
    tr = float(np.add.reduce(np.ravel(rowwise_product(d, cov.matrix) * d)))
    if not math.isfinite(tr):
        raise NumericalError("activation loss is not finite")
    if tr < 0.0:
        floor = -1e-10 * frobenius(w) ** 2 * cov.spectrum.lambda_max
        if tr < floor:
            raise NumericalError(f"negative trace {tr:.3e}; covariance is not PSD")
        return 0.0
    return math.sqrt(tr)


def _power_iteration(a: np.ndarray, tol: float, max_iter: int) -> float:
    n = a.shape[0]
    # fixed, generic start vector (not orthogonal to any coordinate axis)
    v = 1.0 + np.arange(n, dtype=np.float64) / (3.0 * n)
    v /= np.linalg.norm(v)
    lam = float(v @ a @ v)
    for _ in range(max_iter):
        y = a @ v
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        v = y / ny
        lam_new = float(v @ a @ v)
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def _lanczos_extremes(a: np.ndarray, tol: float, max_iter: int) -> tuple[float, float]:
    """Extreme Ritz values of symmetric ``a`` with full reorthogonalization.

    Stops once the residual ``|beta_m * y[-1]|`` of both extreme Ritz pairs
    is below ``tol * |theta_max|``; an exhausted Krylov space restarts from a
    fresh orthogonal direction so disconnected invariant subspaces are seen.
    """
    n = a.shape[0]
    rng = np.random.default_rng(0x5EED)
    scale = max(float(np.max(np.abs(a))), 1e-300)
    basis = np.zeros((n, min(n, max_iter) + 1))
    alphas: list[float] = []
    betas: list[float] = []
    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)
    for m in range(min(n, max_iter)):
        basis[:, m] = q
        w = a @ q
        alpha = float(q @ w)
        w -= basis[:, : m + 1] @ (basis[:, : m + 1].T @ w)
        w -= basis[:, : m + 1] @ (basis[:, : m + 1].T @ w)
        beta = float(np.linalg.norm(w))
        alphas.append(alpha)
        t = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
        theta, y = np.linalg.eigh(t)
        done = m + 1 == n
        if not done and beta > 1e-12 * scale:
            resid = beta * np.abs(y[-1, [0, -1]])
            if np.all(resid <= tol * max(abs(theta[-1]), 1e-300)):
                done = True
        if done:
            return float(theta[0]), float(theta[-1])
        if beta <= 1e-12 * scale:
            # invariant subspace: continue from a new orthogonal direction
            q = rng.standard_normal(n)
            for _ in range(2):
                q -= basis[:, : m + 1] @ (basis[:, : m + 1].T @ q)
            q /= np.linalg.norm(q)
            betas.append(0.0)
        else:
            q = w / beta
            betas.append(beta)
    raise ConvergenceError(f"Lanczos did not converge in {max_iter} iterations")


def spectral_extremes(
    cov: Covariance, tol: float = 1e-10, max_iter: int | None = None, method: str = "lanczos"
) -> SpectralSummary:
    """Extreme eigenvalues of a PSD covariance.

    ``method="power"`` runs plain power iteration for the largest eigenvalue
    and again on ``||C||_F I - C`` for the smallest (a valid shift, since
    ``lambda_max <= ||C||_F`` for PSD matrices).  It stalls on clustered
    spectra, so the default is Lanczos, which accelerates the same Krylov
    sequence.  Both raise :class:`ConvergenceError` past ``max_iter``
    (default ``10 * dim``).
    """
    c = np.asarray(cov.matrix, dtype=np.float64)
    dim = c.shape[0]
    if max_iter is None:
        max_iter = 10 * dim
    frob = frobenius(c)
    if frob == 0.0:
        return SpectralSummary(0.0, 0.0, 0.0, math.inf)
    if method == "power":
        top = _power_iteration(c, tol, max_iter)
        bottom = frob - _power_iteration(frob * np.eye(dim) - c, tol, max_iter)
    elif method == "lanczos":
        bottom, top = _lanczos_extremes(c, tol, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    lam_max = min(max(top, 0.0), frob)
    lam_min = min(max(bottom, 0.0), lam_max)
    if lam_min <= tol * lam_max:
        kappa = math.inf
    else:
        kappa = max(lam_max / lam_min, 1.0)
    return SpectralSummary(lam_min, lam_max, frob, kappa)
