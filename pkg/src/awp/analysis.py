"""Checks of the pruning theory on synthetic problems.

* :func:`oracle_row_sparse` / :func:`oracle_sparse` enumerate every support
  and solve the restricted least-squares problem, giving the exact optimum
  of the k-sparse activation-aware problem for small ``d_in``.
* :func:`gen_recovery_trial` plants k-sparse rows with controlled
  observation-space noise, and :func:`check_recovery_bound` evaluates the
  IHT error bound ``||Θ_i(t) - W*_i|| <= ||W*_i|| / 2^t + 4 ||e_i||`` on the
  iterates of a unit-step run.
* :func:`finite_diff_grad_check` validates ``-2 (W - Θ) C`` against central
  differences of the loss.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from .engine import CompressionConfig, StepRule, run
from .tensor import Covariance, NumericalError, ShapeError, activation_loss, as_matrix, covariance

__all__ = [
    "ORACLE_MAX_DIM",
    "row_losses",
    "oracle_row_sparse",
    "oracle_sparse",
    "RecoveryTrial",
    "BoundReport",
    "gen_recovery_trial",
    "run_recovery",
    "check_recovery_bound",
    "rsc_rsm_kappa",
    "finite_diff_grad_check",
    "random_psd",
]

ORACLE_MAX_DIM = 16


def row_losses(w, theta, cov: Covariance) -> np.ndarray:
    """Per-row activation-aware loss ``sqrt((w_i - θ_i) C (w_i - θ_i)ᵀ)``."""
    d = np.asarray(w, dtype=np.float64) - np.asarray(theta, dtype=np.float64)
    sq = np.sum((d @ cov.matrix) * d, axis=1)
    return np.sqrt(np.clip(sq, 0.0, None))


def oracle_sparse(w, cov: Covariance, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact k-sparse minimizer of every row of ``w``, by enumeration.

    For each support ``S`` the free entries solve the normal equations
    ``C_SS d_S = -C_{S,S^c} w_{S^c}`` of the residual ``d = w - θ``.
    Singular blocks get a ``1e-12 * lambda_max`` ridge.  The first support
    (in lexicographic order) attaining the minimum wins.
    """
    w = as_matrix(w, name="weights")
    d_in = w.shape[1]
    if cov.dim != d_in:
        raise ShapeError(f"covariance dim {cov.dim} != {d_in} columns")
    if d_in > ORACLE_MAX_DIM:
        raise ValueError(f"oracle limited to d_in <= {ORACLE_MAX_DIM}, got {d_in}")
    if not 0 <= k <= d_in:
        raise ValueError(f"k={k} outside [0, {d_in}]")
    c = np.asarray(cov.matrix, dtype=np.float64)
    if k == d_in:
        return w.copy(), np.zeros(w.shape[0])
    ridge = 1e-12 * cov.spectrum.lambda_max
    best_loss = np.full(w.shape[0], np.inf)
    best = np.zeros_like(w)
    cols = np.arange(d_in)
    for support in itertools.combinations(range(d_in), k):
        s = np.array(support, dtype=int)
        rest = np.setdiff1d(cols, s)
        theta = np.zeros_like(w)
        if k:
            css = c[np.ix_(s, s)]
            rhs = -(c[np.ix_(s, rest)] @ w[:, rest].T)
            try:
                d_s = _spd_solve(css, rhs)
            except np.linalg.LinAlgError:
                d_s = _spd_solve(css + ridge * np.eye(k), rhs)
            theta[:, s] = w[:, s] - d_s.T
        loss = row_losses(w, theta, cov)
        better = loss < best_loss
        best_loss = np.where(better, loss, best_loss)
        best[better] = theta[better]
    return best, best_loss


def _spd_solve(a, b):
    chol = np.linalg.cholesky(a)
    y = np.linalg.solve(chol, b)
    return np.linalg.solve(chol.T, y)


def oracle_row_sparse(w_row, cov: Covariance, k: int) -> tuple[np.ndarray, float]:
    theta, loss = oracle_sparse(np.atleast_2d(np.asarray(w_row, dtype=np.float64)), cov, k)
    return theta[0], float(loss[0])


@dataclass(frozen=True, eq=False)
class RecoveryTrial:
    """Planted problem: ``W = W_star + E`` with ``||E_i C^{1/2}|| = noise_level``."""

    cov: Covariance
    w_star: np.ndarray
    w: np.ndarray
    k: int
    noise_level: float
    seed: int


def gen_recovery_trial(d: int, k: int, n: int, noise_level: float, seed: int, d_out: int = 8) -> RecoveryTrial:
    """Gaussian activations (so ``C`` is close to identity) and k-sparse rows
    with magnitudes in ``[0.5, 2]`` and random signs."""
    if n < d:
        raise ValueError("need n >= d for a non-singular covariance")
    if not 0 < k <= d // 3:
        raise ValueError(f"need 0 < k <= d/3, got k={k}, d={d}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((d, n))
    cov = covariance(x, normalize=True)
    w_star = np.zeros((d_out, d))
    for i in range(d_out):
        support = rng.choice(d, size=k, replace=False)
        w_star[i, support] = rng.uniform(0.5, 2.0, size=k) * rng.choice([-1.0, 1.0], size=k)
    w = w_star.copy()
    if noise_level > 0:
        evals, evecs = np.linalg.eigh(cov.matrix)
        if evals[0] <= 1e-12 * evals[-1]:
            raise NumericalError("covariance numerically singular; increase n")
        inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
        g = rng.standard_normal((d_out, d))
        g *= noise_level / np.linalg.norm(g, axis=1, keepdims=True)
        w = w_star + g @ inv_sqrt
    return RecoveryTrial(cov, w_star, w, k, float(noise_level), int(seed))


def run_recovery(trial: RecoveryTrial, max_iters: int = 40, theta0=None) -> list[np.ndarray]:
    """Unit-step pruning run (plain IHT per row) from ``theta0`` (default 0);
    returns every iterate including ``t = 0``."""
    cfg = CompressionConfig(
        mode="prune", keep=trial.k, step_rule=StepRule("explicit", 1.0), max_iters=max_iters,
        grad_tol=1e-300, init="provided",
    )
    start = np.zeros_like(trial.w) if theta0 is None else theta0
    iterates: list[np.ndarray] = []
    run(trial.w, trial.cov, cfg, theta0=start, callback=lambda t, th: iterates.append(th.copy()))
    return iterates


@dataclass
class BoundReport:
    seed: int
    noise_level: float
    kappa: float
    iterations: int
    pairs: int
    pairs_satisfied: int
    t_prime: float
    aggregate_lhs: float
    aggregate_rhs: float
    aggregate_satisfied: bool
    rows_final_satisfied: int
    support_recovered: bool
    violations: list

    @property
    def satisfaction_rate(self) -> float:
        return self.pairs_satisfied / self.pairs if self.pairs else 1.0

    def to_json(self) -> dict:
        out = asdict(self)
        out["satisfaction_rate"] = self.satisfaction_rate
        out["kappa"] = _json_float(self.kappa)
        out["t_prime"] = _json_float(self.t_prime)
        return out


def _json_float(x: float):
    return x if math.isfinite(x) else "inf"


def check_recovery_bound(trial: RecoveryTrial, iterates: list[np.ndarray]) -> BoundReport:
    """Evaluate the per-row IHT bound at every iterate and the aggregated
    Frobenius bound at ``t' = max_i ceil(log2(||W*_i|| / ||e_i||))``.

    Without noise ``t'`` is infinite; the aggregated check then asks for the
    last iterate to match ``W_star`` to ``1e-9`` relative.  Violations are
    reported, never raised.
    """
    if not iterates or iterates[0].shape != trial.w.shape:
        raise ShapeError("iterates do not match the trial")
    star_norm = np.linalg.norm(trial.w_star, axis=1)
    noise = row_losses(trial.w, trial.w_star, trial.cov)
    slack = 8 * np.finfo(np.float64).eps * np.maximum(star_norm, 1.0)
    pairs = sat = 0
    violations = []
    for t, theta in enumerate(iterates):
        err = np.linalg.norm(theta - trial.w_star, axis=1)
        bound = star_norm / 2.0 ** t + 4 * noise
        ok = err <= bound + slack
        pairs += ok.size
        sat += int(np.count_nonzero(ok))
        for i in np.flatnonzero(~ok):
            violations.append({"iter": t, "row": int(i), "error": float(err[i]), "bound": float(bound[i])})

    last = len(iterates) - 1
    total_noise = float(np.sqrt(np.sum(noise ** 2)))
    if np.all(noise > 0):
        t_prime = float(max(math.ceil(math.log2(a / b)) if a > 0 else 0 for a, b in zip(star_norm, noise)))
        t_eval = min(max(int(t_prime), 0), last)
        lhs = float(np.linalg.norm(iterates[t_eval] - trial.w_star))
        rhs = 5 * total_noise
        agg_ok = lhs <= rhs
        row_ok = np.linalg.norm(iterates[t_eval] - trial.w_star, axis=1) <= 5 * noise + slack
    else:
        t_prime = math.inf
        lhs = float(np.linalg.norm(iterates[last] - trial.w_star))
        rhs = 5 * total_noise
        agg_ok = lhs <= rhs + 1e-9 * float(np.linalg.norm(trial.w_star))
        row_ok = np.linalg.norm(iterates[last] - trial.w_star, axis=1) <= 5 * noise + 1e-9 * np.maximum(star_norm, 1.0)
    support_ok = bool(np.array_equal(iterates[last] != 0, trial.w_star != 0))
    return BoundReport(
        seed=trial.seed, noise_level=trial.noise_level, kappa=trial.cov.spectrum.kappa,
        iterations=last, pairs=pairs, pairs_satisfied=sat, t_prime=t_prime,
        aggregate_lhs=lhs, aggregate_rhs=rhs, aggregate_satisfied=bool(agg_ok),
        rows_final_satisfied=int(np.count_nonzero(row_ok)), support_recovered=support_ok,
        violations=violations,
    )


def rsc_rsm_kappa(cov: Covariance) -> tuple[float, float, float]:
    """Restricted strong convexity / smoothness constants ``2 lambda_min``,
    ``2 lambda_max`` and their ratio (infinite for singular ``C``)."""
    spec = cov.spectrum
    return 2 * spec.lambda_min, 2 * spec.lambda_max, spec.kappa


def finite_diff_grad_check(w, theta, cov: Covariance, epsilon: float | None = None,
                           n_coords: int = 32, seed: int = 0) -> float:
    """Max relative error between ``-2 (W - Θ) C`` and central differences of
    ``activation_loss ** 2`` over a random coordinate sample (all
    coordinates when there are at most ``n_coords``).

    Errors are relative to ``max(|analytic|, |numeric|)`` floored at
    ``1e-8 * ||W - Θ||_F ||C||_F`` so that vanishing gradient entries do not
    divide by zero.
    """
    w = as_matrix(w, name="weights")
    theta = as_matrix(theta, name="theta")
    if epsilon is None:
        epsilon = 1e-5 * (1.0 + float(np.max(np.abs(theta), initial=0.0)))
    analytic = -2.0 * (w - theta) @ cov.matrix
    coords = list(np.ndindex(*theta.shape))
    if len(coords) > n_coords:
        rng = np.random.default_rng(seed)
        coords = [coords[i] for i in rng.choice(len(coords), size=n_coords, replace=False)]
    floor = 1e-8 * np.linalg.norm(w - theta) * np.linalg.norm(cov.matrix)
    worst = 0.0
    for ij in coords:
        up = theta.copy()
        up[ij] += epsilon
        down = theta.copy()
        down[ij] -= epsilon
        numeric = (activation_loss(w, up, cov) ** 2 - activation_loss(w, down, cov) ** 2) / (2 * epsilon)
        if not math.isfinite(numeric):
            raise NumericalError(f"non-finite difference quotient at {ij}")
        denom = max(abs(analytic[ij]), abs(numeric), floor)
        if denom > 0:
            worst = max(worst, abs(numeric - analytic[ij]) / denom)
    return worst


def random_psd(d: int, rng: np.random.Generator, lam_low: float = 1.0, lam_high: float = 3.0) -> Covariance:
    """``Q diag(lambda) Qᵀ`` with a Haar-random ``Q`` and eigenvalues drawn
    uniformly from ``[lam_low, lam_high]``."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    lam = rng.uniform(lam_low, lam_high, size=d)
    m = (q * lam) @ q.T
    m = np.triu(m) + np.triu(m, 1).T
    return Covariance.from_matrix(m, normalized=True, sample_count=1)

