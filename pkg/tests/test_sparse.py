import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sphlight.needlet import NeedletCoeffs
from sphlight.sparse import (
    SparsePrior,
    estimate_prior,
    hard,
    hard_threshold,
    soft,
    soft_threshold,
    sparsify,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)
betas = arrays(np.float64, st.integers(1, 64), elements=finite)
thresholds = st.floats(0, 1e3)


def coeffs_of(*bands):
    return NeedletCoeffs(np.zeros(1), [np.asarray(b, float).reshape(-1, 1) for b in bands])


def test_soft_examples():
    assert soft(5.0, 2.0) == 3.0
    assert soft(-1.0, 2.0) == 0.0
    assert soft(2.0, 2.0) == 0.0
    assert soft(-5.0, 2.0) == -3.0


def test_hard_examples():
    assert hard(5.0, 2.0) == 5.0
    assert hard(1.9, 2.0) == 0.0


def test_scalar_threshold():
    assert SparsePrior(1.0, 1.0, 0.5).threshold == 1.0


def test_scalar_threshold_matches_matrix_expression():
    # [M_eta^-1 - (M_eta + M_eta M_phi^-1 M_eta)^-1]^-1 with diagonal covariances
    rng = np.random.default_rng(0)
    for _ in range(20):
        e, p, lam = rng.uniform(0.1, 5, 3)
        Me, Mp = e * np.eye(4), p * np.eye(4)
        inv = np.linalg.inv
        matrix = inv(inv(Me) - inv(Me + Me @ inv(Mp) @ Me)) * lam
        assert np.allclose(matrix, SparsePrior(e, p, lam).threshold * np.eye(4), rtol=1e-10)


def test_prior_validation():
    with pytest.raises(ValueError):
        SparsePrior(0.0, 1.0)
    with pytest.raises(ValueError):
        SparsePrior(1.0, 1.0, -0.1)


def test_zero_lambda_is_identity():
    rng = np.random.default_rng(1)
    c = coeffs_of(rng.normal(size=12), rng.normal(size=48))
    priors = {1: SparsePrior(1, 1, 0.0), 2: SparsePrior(2, 3, 0.0)}
    for op in (soft_threshold, hard_threshold):
        out = op(c, priors, {1, 2})
        assert all(np.array_equal(a, b) for a, b in zip(out.bands, c.bands))


def test_passthrough_and_missing_prior():
    rng = np.random.default_rng(2)
    c = NeedletCoeffs(np.array([3.0]), [rng.normal(size=(12, 1)), rng.normal(size=(48, 1))])
    out = soft_threshold(c, {2: SparsePrior(1, 1, 100.0)})
    assert np.array_equal(out.band(1), c.band(1))
    assert np.all(out.band(2) == 0)
    assert out.dc[0] == 3.0
    with pytest.raises(KeyError):
        soft_threshold(c, {}, {2})


def test_spike_band_hits_floor():
    band = np.zeros(48)
    band[7] = 10.0
    p = estimate_prior(coeffs_of(np.zeros(12), band), 2)
    assert p.sigma_eta2 == 1e-12


def test_band_too_small():
    with pytest.raises(ValueError):
        estimate_prior(coeffs_of(np.ones(4)), 1)


def test_ambient_mixture_positive():
    rng = np.random.default_rng(3)
    x = rng.normal(0, 1, 192) + rng.normal(0, 3, 192)
    p = estimate_prior(coeffs_of(np.zeros(12), np.zeros(48), x), 3)
    assert p.sigma_phi2 > 0


def test_prior_pools_channels():
    rng = np.random.default_rng(4)
    band = rng.normal(size=(48, 3))
    c = NeedletCoeffs(np.zeros(3), [np.zeros((12, 3)), band])
    flat = coeffs_of(np.zeros(12), band.ravel())
    assert estimate_prior(c, 2) == estimate_prior(flat, 2)


@pytest.mark.xfail(strict=True, reason="MAD at n=192 has sd ~0.67 around 4; measured [3,5] coverage ~86%")
def test_mad_calibration_coverage():
    rng = np.random.default_rng(2024)
    hits = 0
    trials = 2000
    for _ in range(trials):
        band = rng.normal(0, 2, 192)
        s = estimate_prior(coeffs_of(np.zeros(12), np.zeros(48), band), 3).sigma_eta2
        hits += 3 <= s <= 5
    assert hits / trials >= 0.95


@settings(max_examples=300, deadline=None)
@given(betas, thresholds)
def test_soft_contraction_and_sign(x, t):
    s = soft(x, t)
    assert np.all(np.abs(s) <= np.abs(x))
    assert np.all(np.abs(s - x) <= t * (1 + 1e-12) + 1e-9)
    assert np.all(s * x >= 0)


@settings(max_examples=200, deadline=None)
@given(betas, thresholds)
def test_hard_idempotent(x, t):
    once = hard(x, t)
    assert np.array_equal(hard(once, t), once)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 48, elements=st.floats(-100, 100)), st.floats(0, 5), st.floats(0, 5))
def test_sparsity_monotone_in_lambda(x, l1, l2):
    lo, hi = sorted((l1, l2))
    c = coeffs_of(np.zeros(12), x)
    prior = {2: SparsePrior(1.0, 0.5, lo)}
    prior_hi = {2: SparsePrior(1.0, 0.5, hi)}
    for op in (soft_threshold, hard_threshold):
        assert np.count_nonzero(op(c, prior_hi).band(2)) <= np.count_nonzero(op(c, prior).band(2))


def test_sparsify_default_leaves_band_one():
    rng = np.random.default_rng(5)
    c = coeffs_of(rng.normal(size=12), rng.normal(size=48), rng.normal(size=192))
    out = sparsify(c, 1e9)
    assert np.array_equal(out.band(1), c.band(1))
    assert np.all(out.band(2) == 0) and np.all(out.band(3) == 0)
    hard_out = sparsify(c, 0.0, mode="hard")
    assert all(np.array_equal(a, b) for a, b in zip(hard_out.bands, c.bands))
