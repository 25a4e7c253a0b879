import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from awp.tensor import (
    ConvergenceError,
    Covariance,
    NumericalError,
    ShapeError,
    activation_loss,
    covariance,
    frobenius,
    rowwise_product,
    spectral_extremes,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def matrices(max_rows=6, max_cols=8):
    shape = st.tuples(st.integers(1, max_rows), st.integers(1, max_cols))
    return shape.flatmap(lambda s: arrays(np.float64, s, elements=finite))


# covariance

def test_identity_activations_give_scaled_identity():
    d = 5
    cov = covariance(np.eye(d))
    np.testing.assert_array_equal(cov.matrix, np.eye(d) / d)
    assert cov.normalized and cov.sample_count == d


def test_hand_product_unnormalized():
    cov = covariance(np.array([[1.0, 2.0], [0.0, 1.0]]), normalize=False)
    np.testing.assert_array_equal(cov.matrix, [[5.0, 2.0], [2.0, 1.0]])


@given(matrices())
def test_normalized_is_unnormalized_over_n(x):
    n = x.shape[1]
    np.testing.assert_allclose(covariance(x).matrix, covariance(x, normalize=False).matrix / n, rtol=1e-12,
                               atol=1e-300)


@given(matrices())
def test_covariance_symmetric_bitwise(x):
    c = covariance(x).matrix
    assert np.array_equal(c, c.T)


def test_covariance_rejects_non_finite():
    with pytest.raises((NumericalError, ValueError)):
        covariance(np.array([[1.0, np.nan]]))


def test_from_matrix_rejects_asymmetric_and_indefinite():
    with pytest.raises(ValueError):
        Covariance.from_matrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        Covariance.from_matrix(np.array([[1.0, 0.0], [0.0, -1.0]]))


# activation loss

def test_loss_zero_at_w(rng):
    w = rng.standard_normal((4, 6))
    assert activation_loss(w, w, covariance(rng.standard_normal((6, 20)))) == 0.0


def test_loss_identity_covariance_is_frobenius(rng):
    w, theta = rng.standard_normal((3, 5)), rng.standard_normal((3, 5))
    cov = covariance(np.eye(5), normalize=False)
    assert activation_loss(w, theta, cov) == pytest.approx(np.linalg.norm(w - theta), rel=1e-12)


@given(st.integers(1, 6), st.integers(1, 10), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_loss_matches_direct_residual(d_out, d_in, n, seed):
    r = np.random.default_rng(seed)
    w, theta, x = r.standard_normal((d_out, d_in)), r.standard_normal((d_out, d_in)), r.standard_normal((d_in, n))
    direct = np.linalg.norm((w - theta) @ x) ** 2
    got = activation_loss(w, theta, covariance(x, normalize=False)) ** 2
    assert got == pytest.approx(direct, rel=1e-8, abs=1e-12 * (1 + direct))


def test_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        activation_loss(np.zeros((2, 3)), np.zeros((2, 4)), covariance(np.eye(3)))


# spectral extremes

def test_diagonal_spectrum():
    s = spectral_extremes(Covariance.from_matrix(np.diag([4.0, 1.0])))
    assert s.lambda_min == pytest.approx(1.0, rel=1e-10)
    assert s.lambda_max == pytest.approx(4.0, rel=1e-10)
    assert s.kappa == pytest.approx(4.0, rel=1e-10)
    assert s.frob_norm == pytest.approx(math.sqrt(17.0), rel=1e-14)


@pytest.mark.parametrize("c", [0.25, 1.0, 7.0])
@pytest.mark.parametrize("method", ["lanczos", "power"])
def test_isotropic_spectrum(c, method):
    s = spectral_extremes(Covariance.from_matrix(c * np.eye(6)), method=method)
    assert s.lambda_min == pytest.approx(c, rel=1e-9)
    assert s.lambda_max == pytest.approx(c, rel=1e-9)
    assert s.kappa == pytest.approx(1.0, rel=1e-9)


def test_rank_deficient_has_infinite_kappa(rng):
    s = spectral_extremes(covariance(rng.standard_normal((10, 4))))
    assert s.lambda_min <= 1e-10 * s.lambda_max
    assert s.kappa == math.inf


@given(st.integers(1, 24), st.integers(0, 2**32 - 1))
def test_extremes_match_dense_eigensolver(d, seed):
    r = np.random.default_rng(seed)
    cov = covariance(r.standard_normal((d, d + 3)))
    ev = np.linalg.eigvalsh(cov.matrix)
    s = spectral_extremes(cov)
    assert s.lambda_max == pytest.approx(ev[-1], rel=1e-9)
    assert s.lambda_min == pytest.approx(ev[0], rel=1e-7, abs=1e-9 * ev[-1])


def test_power_method_agrees_on_spread_spectrum(rng):
    q, _ = np.linalg.qr(rng.standard_normal((12, 12)))
    m = (q * np.linspace(1.0, 10.0, 12)) @ q.T
    s = spectral_extremes(Covariance.from_matrix((m + m.T) / 2), method="power", max_iter=5000)
    assert s.lambda_max == pytest.approx(10.0, rel=1e-8)
    assert s.lambda_min == pytest.approx(1.0, rel=1e-6)


def test_power_method_reports_non_convergence(rng):
    q, _ = np.linalg.qr(rng.standard_normal((12, 12)))
    m = (q * np.linspace(1.0, 10.0, 12)) @ q.T
    with pytest.raises(ConvergenceError):
        spectral_extremes(Covariance.from_matrix((m + m.T) / 2), method="power", max_iter=5)


# frobenius

def test_frobenius_examples():
    assert frobenius(np.zeros((3, 3))) == 0.0
    assert frobenius(np.array([[3.0, 4.0]])) == 5.0


@given(matrices(), st.floats(-1e3, 1e3, allow_nan=False))
def test_frobenius_homogeneous(m, c):
    assert frobenius(c * m) == pytest.approx(abs(c) * frobenius(m), rel=1e-12, abs=1e-300)


def test_frobenius_survives_huge_entries():
    assert frobenius(np.array([[1e200, 1e200]])) == pytest.approx(math.sqrt(2) * 1e200, rel=1e-14)


def test_frobenius_rejects_nan():
    with pytest.raises(NumericalError):
        frobenius(np.array([[np.nan]]))


# row-wise product

def test_rowwise_product_matches_matmul(rng):
    d, c = rng.standard_normal((7, 9)), rng.standard_normal((9, 9))
    np.testing.assert_allclose(rowwise_product(d, c), d @ c, rtol=1e-12, atol=1e-12)


def test_rowwise_product_rows_independent(rng):
    d, c = rng.standard_normal((5, 9)), rng.standard_normal((9, 9))
    full = rowwise_product(d, c)
    for i in range(5):
        assert np.array_equal(full[i], rowwise_product(d[i:i + 1], c)[0])
