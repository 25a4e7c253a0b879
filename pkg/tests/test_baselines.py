import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from awp.baselines import (
    ActivationNorms,
    awq_lite_quantize,
    magnitude_prune,
    rtn_quantize,
    sequential_pipeline,
    wanda_prune,
)
from awp.projections import QuantSpec, RowSparsitySpec
from awp.suites import feasibility_violations
from awp.tensor import ShapeError, activation_loss, covariance

weights = arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 8)),
                 elements=st.floats(-10, 10, allow_nan=False))


def test_magnitude_examples(rng):
    w = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(magnitude_prune(w, 5)[0], w)
    np.testing.assert_array_equal(magnitude_prune(np.array([[1.0, -5.0, 2.0]]), 1)[0], [[0.0, -5.0, 0.0]])


def test_wanda_hand_example():
    w = np.array([[1.0, -4.0], [3.0, 2.0]])
    norms = ActivationNorms(np.array([2.0, 1.0]))
    theta, mask = wanda_prune(w, norms, 1)
    np.testing.assert_array_equal(theta, [[0.0, -4.0], [3.0, 0.0]])
    np.testing.assert_array_equal(mask, [[False, True], [True, False]])


@given(weights, st.floats(0.01, 100), st.data())
def test_wanda_uniform_norms_is_magnitude(w, c, data):
    k = data.draw(st.integers(0, w.shape[1]))
    norms = ActivationNorms(np.full(w.shape[1], c))
    np.testing.assert_array_equal(wanda_prune(w, norms, k)[0], magnitude_prune(w, k)[0])


@given(weights, st.floats(0.01, 100), st.data())
def test_wanda_mask_scale_invariant(w, c, data):
    k = data.draw(st.integers(0, w.shape[1]))
    v = data.draw(arrays(np.float64, w.shape[1], elements=st.floats(0.0, 10.0)))
    a = wanda_prune(w, ActivationNorms(v), k)[1]
    b = wanda_prune(w, ActivationNorms(v * 4.0), k)[1]
    np.testing.assert_array_equal(a, b)


def test_norms_from_activations_and_covariance(rng):
    x = rng.standard_normal((5, 30))
    a = ActivationNorms.from_activations(x)
    np.testing.assert_allclose(a.l2_row_norms, np.linalg.norm(x, axis=1), rtol=1e-12)
    np.testing.assert_allclose(a.l1_mean_norms, np.abs(x).mean(axis=1), rtol=1e-12)
    b = ActivationNorms.from_covariance(covariance(x))
    np.testing.assert_allclose(b.l2_row_norms, a.l2_row_norms, rtol=1e-12)
    assert b.l1_mean_norms is None


def test_norm_length_mismatch(rng):
    with pytest.raises(ShapeError):
        wanda_prune(rng.standard_normal((2, 4)), ActivationNorms.uniform(3), 2)


def test_rtn_examples():
    np.testing.assert_array_equal(rtn_quantize(np.full((2, 6), -1.25), QuantSpec(4, 3))[0], np.full((2, 6), -1.25))
    w = np.array([[0.0, 1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(rtn_quantize(w, QuantSpec(2, 4))[0], w)


def test_rtn_half_step(rng):
    w = rng.standard_normal((8, 64))
    q, grid = rtn_quantize(w, QuantSpec(4, 16))
    scale, _, _ = grid.expand(64)
    assert np.all(np.abs(q - w) <= scale / 2 * (1 + 1e-9))


def test_awq_exponent_zero_is_rtn(rng):
    w, x = rng.standard_normal((4, 16)), rng.standard_normal((16, 50))
    theta, _, s = awq_lite_quantize(w, ActivationNorms.from_activations(x), QuantSpec(4, 8), exponent=0.0)
    np.testing.assert_array_equal(theta, rtn_quantize(w, QuantSpec(4, 8))[0])
    assert np.all(s == 1.0)


def test_awq_equal_norms_matches_rtn_loss(rng):
    w = rng.standard_normal((4, 16))
    x = rng.standard_normal((16, 50))
    cov = covariance(x)
    theta, _, _ = awq_lite_quantize(w, ActivationNorms.uniform(16, 3.7), QuantSpec(4, 8))
    rtn, _ = rtn_quantize(w, QuantSpec(4, 8))
    assert activation_loss(w, theta, cov) == pytest.approx(activation_loss(w, rtn, cov), rel=1e-10)


def test_awq_helps_when_one_channel_dominates():
    wins = 0
    for seed in range(100):
        r = np.random.default_rng(seed)
        w = r.standard_normal((8, 4))
        x = r.standard_normal((4, 64))
        x[r.integers(4)] *= 20.0
        cov = covariance(x)
        q = QuantSpec(2, 4)
        a, _, _ = awq_lite_quantize(w, ActivationNorms.from_activations(x), q)
        b, _ = rtn_quantize(w, q)
        wins += activation_loss(w, a, cov) <= activation_loss(w, b, cov)
    assert wins > 50


def test_awq_needs_l1_norms(rng):
    x = rng.standard_normal((4, 10))
    with pytest.raises(ValueError):
        awq_lite_quantize(rng.standard_normal((2, 4)), ActivationNorms.from_covariance(covariance(x)), QuantSpec())


def test_sequential_vacuous_specs(rng):
    w, x = rng.standard_normal((4, 8)), rng.standard_normal((8, 40))
    norms = ActivationNorms.from_activations(x)
    q = QuantSpec(4, 4)
    full = sequential_pipeline(w, norms, 8, q, "prune_then_quant")
    np.testing.assert_array_equal(full.theta, awq_lite_quantize(w, norms, q)[0])
    # a single-entry group is represented exactly, so quantization is vacuous
    kept = sequential_pipeline(w, norms, 3, QuantSpec(2, 1), "quant_then_prune")
    np.testing.assert_allclose(kept.theta, wanda_prune(w, norms, 3)[0], rtol=1e-15)


@pytest.mark.parametrize("order", ["prune_then_quant", "quant_then_prune"])
def test_sequential_feasible(order, rng):
    w, x = rng.standard_normal((8, 16)), rng.standard_normal((16, 64))
    norms = ActivationNorms.from_activations(x)
    spec = RowSparsitySpec.from_ratio(0.5, 16)
    res = sequential_pipeline(w, norms, spec, QuantSpec(4, 8), order, cov=covariance(x))
    assert np.all(res.mask.sum(axis=1) == 8)
    assert not np.any(res.theta[~res.mask])
    assert feasibility_violations(res.theta, res.mask, 8, res.grid, res.column_scales) == []
    assert len(res.trace) == 1 and res.stop_reason == "closed_form"


def test_sequential_orders_share_sparsity(rng):
    w, x = rng.standard_normal((8, 16)), rng.standard_normal((16, 64))
    norms = ActivationNorms.from_activations(x)
    a = sequential_pipeline(w, norms, 6, QuantSpec(4, 8), "prune_then_quant")
    b = sequential_pipeline(w, norms, 6, QuantSpec(4, 8), "quant_then_prune")
    np.testing.assert_array_equal(a.mask.sum(axis=1), b.mask.sum(axis=1))
