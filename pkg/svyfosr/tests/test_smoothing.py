"""Tests for penalized spline smoothing."""
import numpy as np
import pytest
from pydantic import ValidationError

from svyfosr.core.exceptions import SmootherSpecError
from svyfosr.models.coefficients import RawCoefficientMatrix
from svyfosr.schemas import SmootherSpec
from svyfosr.services.smoothing import (
    build_basis,
    default_basis_dim,
    select_lambda,
    smooth_coefficients,
    smooth_with_fixed_lambda,
)


def _raw(rows):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    L = rows.shape[1]
    return RawCoefficientMatrix(
        beta_tilde=rows, converged=np.ones(L, dtype=bool), iterations=np.ones(L, dtype=int)
    )


def test_default_basis_dim():
    """Test the default basis size rule and its cap."""
    assert default_basis_dim(50) == 13
    assert default_basis_dim(1440) == 35
    assert default_basis_dim(8) == 4


def test_basis_larger_than_grid_rejected():
    """Test that K > L raises SmootherSpecError."""
    with pytest.raises(SmootherSpecError):
        build_basis(np.linspace(0, 1, 20), SmootherSpec(basis_dim=30))


def test_spec_validation():
    """Test SmootherSpec field checks."""
    with pytest.raises(ValidationError):
        SmootherSpec(lam=-1.0)
    with pytest.raises(ValidationError):
        SmootherSpec(basis_dim=3, penalty_order=2)


def test_saturated_basis_interpolates():
    """Test that lambda=0 with K=L reproduces the raw values."""
    s = np.linspace(0, 1, 10)
    y = np.random.default_rng(0).normal(size=10)
    out = smooth_coefficients(_raw(y), s, SmootherSpec(basis_dim=10, lam=0.0))
    assert np.allclose(out.beta_hat[0], y, atol=1e-8)


def test_large_lambda_gives_linear_fit():
    """Test that a huge second-order penalty converges to the least-squares line."""
    s = np.linspace(0, 1, 60)
    y = np.sin(2 * np.pi * s) + 0.5 * s
    out = smooth_coefficients(_raw(y), s, SmootherSpec(lam=1e12))
    line = np.polyval(np.polyfit(s, y, 1), s)
    assert np.max(np.abs(out.beta_hat[0] - line)) < 1e-4


def test_linear_function_unpenalized():
    """Test that a linear function passes through for any penalty."""
    s = np.linspace(0, 1, 40)
    y = 2.0 + 3.0 * s
    for lam in (0.0, 1.0, 1e6):
        out = smooth_coefficients(_raw(y), s, SmootherSpec(lam=lam))
        assert np.allclose(out.beta_hat[0], y, atol=1e-8)


def test_gcv_smoothing_reduces_error():
    """Test that GCV smoothing of a noisy sinusoid is closer to the truth than the raw values."""
    s = np.linspace(0, 1, 100)
    truth = np.sin(2 * np.pi * s)
    wins = 0
    for seed in range(20):
        y = truth + np.random.default_rng(seed).normal(0, 0.1, 100)
        out = smooth_coefficients(_raw(y), s)
        wins += np.mean((out.beta_hat[0] - truth) ** 2) < np.mean((y - truth) ** 2)
    assert wins == 20


def test_fixed_lambda_matches_gcv_path():
    """Test that reusing the chosen penalties is bit-identical to the GCV path."""
    s = np.linspace(0, 1, 50)
    rng = np.random.default_rng(1)
    raw = _raw(np.vstack([np.cos(3 * s), s**2]) + rng.normal(0, 0.05, (2, 50)))
    auto = smooth_coefficients(raw, s)
    fixed = smooth_with_fixed_lambda(raw, auto.lambdas, auto.basis)
    assert np.array_equal(auto.beta_hat, fixed.beta_hat)
    assert auto.gcv_scores is not None and len(auto.gcv_scores) == 2


def test_fixed_lambda_validation():
    """Test that negative or misshapen penalties are rejected."""
    s = np.linspace(0, 1, 30)
    basis = build_basis(s)
    raw = _raw(np.ones((2, 30)))
    with pytest.raises(SmootherSpecError):
        smooth_with_fixed_lambda(raw, [1.0, -1.0], basis)
    with pytest.raises(SmootherSpecError):
        smooth_with_fixed_lambda(raw, [1.0], basis)


def test_smoother_matrix_memoized():
    """Test that hat matrices are cached per penalty."""
    basis = build_basis(np.linspace(0, 1, 30))
    assert basis.smoother_matrix(2.0) is basis.smoother_matrix(2.0)


def test_edf_bounds():
    """Test that effective degrees of freedom decrease from K to the penalty null space."""
    basis = build_basis(np.linspace(0, 1, 40))
    assert basis.edf(0.0) == pytest.approx(basis.dim)
    assert basis.edf(1.0) < basis.edf(0.0)
    assert basis.edf(1e12) == pytest.approx(2.0, abs=1e-3)


def test_select_lambda_within_search_range():
    """Test that the GCV penalty stays inside the configured search range."""
    s = np.linspace(0, 1, 40)
    y = np.sin(4 * s) + np.random.default_rng(2).normal(0, 0.2, 40)
    lam, score = select_lambda(y, build_basis(s))
    assert 1e-8 <= lam <= 1e8
    assert np.isfinite(score)


def test_non_equispaced_grid_in_other_units():
    """Test smoothing on a grid given in minutes."""
    minutes = np.cumsum(np.random.default_rng(3).uniform(1, 3, 30))
    y = 0.1 * minutes
    out = smooth_coefficients(_raw(y), minutes, SmootherSpec(lam=10.0))
    assert np.allclose(out.beta_hat[0], y, atol=1e-8)


def test_fixed_lambda_smoother_is_linear():
    """Test that smoothing with a fixed penalty is linear in the raw curves."""
    s = np.linspace(0, 1, 35)
    rng = np.random.default_rng(4)
    y1, y2 = rng.normal(size=(2, 35))
    basis = build_basis(s)
    for lam in (0.0, 0.3, 50.0):
        combined = smooth_with_fixed_lambda(_raw(2.5 * y1 - 0.7 * y2), [lam], basis).beta_hat[0]
        parts = smooth_with_fixed_lambda(_raw(np.vstack([y1, y2])), [lam, lam], basis).beta_hat
        assert np.allclose(combined, 2.5 * parts[0] - 0.7 * parts[1], atol=1e-10)


def test_constants_preserved():
    """Test that a constant curve is returned unchanged for any penalty, including GCV."""
    s = np.linspace(0, 1, 25)
    for lam in (0.0, 1.0, 1e8, "auto"):
        out = smooth_coefficients(_raw(np.full(25, -1.3)), s, SmootherSpec(lam=lam))
        assert np.allclose(out.beta_hat[0], -1.3, atol=1e-8)


def test_smoother_matrix_cache_shared_across_threads():
    """Test that concurrent requests for one penalty get the same cached matrix."""
    from concurrent.futures import ThreadPoolExecutor

    basis = build_basis(np.linspace(0, 1, 40))
    with ThreadPoolExecutor(max_workers=8) as pool:
        hats = list(pool.map(lambda _: basis.smoother_matrix(0.75), range(32)))
    assert all(h is hats[0] for h in hats)
    assert not hats[0].flags.writeable
