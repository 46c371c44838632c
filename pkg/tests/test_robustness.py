import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate
from scipy.special import expit
from scipy.stats import norm

from croco.errors import ConfigError, ShapeError
from croco.noise import NoiseSpec
from croco.robustness import (RobustnessEstimate, bound_table, brute_force_invalidation, confidence, estimate,
                              invalidation_rate_mc, min_samples, soft_invalidation_mc, upper_bound)

from conftest import constant_model, linear_model, random_model

STEP = linear_model([1e4])  # h(x) = 1 iff x > 0


def test_constant_class_one_never_invalidates():
    spec = NoiseSpec.gaussian(0.1, 2)
    assert invalidation_rate_mc(constant_model(0.9), np.zeros(2), spec, 1000) == 0.0


def test_constant_class_zero_always_invalidates():
    spec = NoiseSpec.gaussian(0.1, 2)
    assert invalidation_rate_mc(constant_model(0.1), np.zeros(2), spec, 1000) == 1.0


def test_threshold_classifier_at_boundary():
    gamma = invalidation_rate_mc(STEP, np.zeros(1), NoiseSpec.gaussian(0.04, 1, seed=2), 100_000)
    assert gamma == pytest.approx(0.5, abs=0.01)


@given(st.integers(1, 300), st.integers(0, 50))
def test_gamma_is_a_multiple_of_one_over_k(K, seed):
    model = random_model([2, 5, 1], seed=seed)
    gamma = invalidation_rate_mc(model, np.array([0.1, -0.2]), NoiseSpec.gaussian(0.3, 2, seed=seed), K)
    assert 0.0 <= gamma <= 1.0
    assert gamma * K == pytest.approx(round(gamma * K), abs=1e-9)


def test_soft_rate_of_constant_model():
    spec = NoiseSpec.gaussian(0.1, 2)
    assert soft_invalidation_mc(constant_model(0.2), np.zeros(2), spec, 500) == pytest.approx(0.8, abs=1e-12)
    assert soft_invalidation_mc(constant_model(1.0), np.zeros(2), spec, 500) == pytest.approx(0.0, abs=1e-12)


def test_soft_rate_zero_noise_limit(rng):
    model = random_model([3, 6, 1], seed=4)
    x = rng.normal(size=3)
    theta = soft_invalidation_mc(model, x, NoiseSpec.gaussian(1e-12, 3), 200)
    assert theta == pytest.approx(1.0 - model.forward(x), abs=1e-6)


def test_fixed_draws_mode(rng):
    model = random_model([2, 4, 1], seed=1)
    draws = rng.normal(scale=0.1, size=(50, 2))
    x = np.array([0.3, 0.1])
    p = model.forward(x + draws)
    spec = NoiseSpec.gaussian(0.01, 2)
    assert soft_invalidation_mc(model, x, spec, draws=draws) == pytest.approx(np.mean(1 - p), abs=1e-15)
    assert invalidation_rate_mc(model, x, spec, draws=draws) == np.mean(p <= 0.5)


def test_estimators_check_dimensions():
    with pytest.raises(ShapeError):
        invalidation_rate_mc(random_model([2, 3, 1], seed=0), np.zeros(3), NoiseSpec.gaussian(0.1, 3))
    with pytest.raises(ShapeError):
        soft_invalidation_mc(random_model([2, 3, 1], seed=0), np.zeros(2), NoiseSpec.gaussian(0.1, 3))


def test_estimate_bundles_both(rng):
    model = random_model([2, 4, 1], seed=1)
    spec = NoiseSpec.gaussian(0.05, 2, seed=3)
    est = estimate(model, np.array([0.2, 0.2]), spec, K=500)
    assert est.gamma_tilde == invalidation_rate_mc(model, np.array([0.2, 0.2]), spec, 500)
    assert est.theta_tilde == soft_invalidation_mc(model, np.array([0.2, 0.2]), spec, 500)
    assert est.upper_bound == pytest.approx(0.2 + 2 * est.theta_tilde, abs=1e-15)
    assert est.confidence == confidence(0.1, 500)


def test_upper_bound_values():
    assert upper_bound(0.05, 0.1, 0.5) == pytest.approx(0.3, abs=1e-15)
    assert upper_bound(0.0, 0.1, 0.5) == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(ConfigError):
        upper_bound(0.1, 0.1, 1.0)
    with pytest.raises(ConfigError):
        upper_bound(0.1, 0.0, 0.5)


def test_confidence_values():
    assert confidence(0.1, 500) == pytest.approx(1 - math.exp(-10), abs=1e-15)
    assert confidence(0.1, 500) >= 0.999
    assert confidence(0.05, 1000) == pytest.approx(0.99326, abs=5e-6)
    assert confidence(1e-9, 500) < 1e-12


@pytest.mark.parametrize("m, c, K", [(0.1, 0.999, 346), (0.1, 0.99995, 496)])
def test_min_samples_values(m, c, K):
    assert min_samples(m, c) == K
    assert K == math.ceil(math.log(1 / (1 - c)) / (2 * m * m))


def test_min_samples_small_confidence():
    assert min_samples(0.1, 1e-9) == 1


@pytest.mark.parametrize("m, c", [(0.0, 0.9), (0.1, 1.0), (0.1, 0.0), (-0.1, 0.5)])
def test_min_samples_domain(m, c):
    with pytest.raises(ConfigError):
        min_samples(m, c)


@given(st.floats(0.001, 0.5), st.floats(1e-6, 1 - 1e-9))
def test_confidence_and_min_samples_are_inverse(m, c):
    K = min_samples(m, c)
    assert confidence(m, K) >= c
    assert K == 1 or confidence(m, K - 1) < c


@given(st.floats(0, 1), st.floats(1e-4, 1.0), st.floats(0.0, 0.99))
def test_bound_dominates_floor(theta, m, t):
    est = RobustnessEstimate.from_estimates(0.0, theta, 100, m, t)
    assert est.upper_bound >= m / (1 - t) > 0
    assert 0 < est.confidence < 1 or est.confidence == 1.0


def test_bound_table_rows():
    rows = bound_table([0.1, 0.05], [0.999])
    assert [r["K"] for r in rows] == [346, 1382]


def test_quadrature_constant_model():
    for spec in (NoiseSpec.gaussian(0.02, 2), NoiseSpec.ball(0.3, 2), NoiseSpec.ball(0.3, 3),
                 NoiseSpec.gaussian(0.02, 1)):
        res = brute_force_invalidation(constant_model(0.3, n=spec.n_features), np.zeros(spec.n_features), spec)
        assert res.theta == pytest.approx(0.7, abs=res.truncation_mass + 1e-12)
        assert res.gamma == pytest.approx(1.0, abs=res.truncation_mass + 1e-12)


def test_quadrature_threshold_at_boundary():
    res = brute_force_invalidation(STEP, np.zeros(1), NoiseSpec.gaussian(0.04, 1))
    assert res.gamma == pytest.approx(0.5, abs=1e-3)
    res = brute_force_invalidation(STEP, np.zeros(1), NoiseSpec.ball(0.2, 1))
    assert res.gamma == pytest.approx(0.5, abs=1e-3)


def test_quadrature_matches_scipy_quad():
    model = linear_model([3.0], b=-0.5)
    x, var = np.array([0.4]), 0.05
    s = math.sqrt(var)
    theta_ref, _ = integrate.quad(lambda e: (1 - expit(3.0 * (x[0] + e) - 0.5)) * norm.pdf(e, scale=s),
                                  -10 * s, 10 * s, epsabs=1e-13)
    gamma_ref = norm.cdf((0.5 / 3.0 - x[0]) / s)
    res = brute_force_invalidation(model, x, NoiseSpec.gaussian(var, 1))
    assert res.theta == pytest.approx(theta_ref, abs=1e-9)
    assert res.gamma == pytest.approx(gamma_ref, abs=2e-3)


def test_quadrature_ball_half_plane():
    # uniform disc of radius r centred at distance d from a line: segment area fraction
    r, d = 0.3, 0.1
    model = linear_model([0.0, 1e4])
    res = brute_force_invalidation(model, np.array([0.0, d]), NoiseSpec.ball(r, 2))
    segment = r * r * math.acos(d / r) - d * math.sqrt(r * r - d * d)
    assert res.gamma == pytest.approx(segment / (math.pi * r * r), abs=2e-3)


def test_quadrature_respects_frozen_mask():
    model = linear_model([1e4, 5.0])
    spec = NoiseSpec.gaussian(0.04, 2, frozen=(False, True))
    res = brute_force_invalidation(model, np.array([0.0, 0.0]), spec)
    assert res.gamma == pytest.approx(0.5, abs=1e-3)


def test_quadrature_rejects_high_dimension():
    with pytest.raises(ConfigError):
        brute_force_invalidation(random_model([4, 3, 1], seed=0), np.zeros(4), NoiseSpec.gaussian(0.1, 4))


def test_quadrature_agrees_with_monte_carlo_2d():
    model = random_model([2, 8, 1], seed=21, bias_scale=0.5)
    x = np.array([0.2, -0.1])
    spec = NoiseSpec.gaussian(0.05, 2, seed=4)
    res = brute_force_invalidation(model, x, spec)
    est = estimate(model, x, spec, K=1_000_000)
    assert abs(est.gamma_tilde - res.gamma) < 0.005
    assert abs(est.theta_tilde - res.theta) < 0.005
