import numpy as np

from awp.projections import QuantSpec, fit_quant_grid, quantize_to_grid
from awp.suites import (
    canonical_json,
    factor_activations,
    feasibility_violations,
    joint_suite,
    oracle_suite,
    quantization_suite,
    recovery_suite,
)


def test_factor_activations_shape_and_variance():
    x = factor_activations(64, 4096, np.random.default_rng(0))
    assert x.shape == (64, 4096)
    assert abs(np.var(x) - 1.0) < 0.3


def test_feasibility_checker_flags_violations():
    theta = np.array([[1.0, 2.0, 0.0]])
    mask = np.array([[True, False, True]])
    assert any("outside" in v for v in feasibility_violations(theta, mask, 2))
    assert any("count" in v for v in feasibility_violations(theta, np.array([[True, True, True]]), 2))
    g = fit_quant_grid(np.array([[0.0, 3.0, 1.0]]), QuantSpec(2, 3))
    assert feasibility_violations(np.array([[0.5, 3.0, 1.0]]), grid=g)
    assert feasibility_violations(quantize_to_grid(np.array([[0.4, 3.0, 1.0]]), g), grid=g) == []


def test_small_suites_are_feasible_and_deterministic():
    runs = [
        (recovery_suite, dict(trials=3, noise_level=0.1)),
        (oracle_suite, dict(instances=3)),
        (quantization_suite, dict(instances=2)),
        (joint_suite, dict(instances=1)),
    ]
    for fn, kw in runs:
        a, b = fn(**kw), fn(**kw)
        assert canonical_json(a) == canonical_json(b)
        key = "infeasible_iterates" if fn is recovery_suite else "infeasible"
        assert a[key] == 0


def test_canonical_json_handles_inf():
    assert '"inf"' in canonical_json({"x": float("inf")})
