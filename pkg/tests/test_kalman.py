import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcv.kalman import kalman_filter, kalman_forecast, kalman_smoother
from pcv.linalg import is_psd
from pcv.stacked import (cond_dist_state_given_F, propagator, propagator_closed_form,
                         real_measure_system, smoothed_by_conditioning)
from pcv.verify import _random_instance

seeds = st.integers(0, 10_000)


def _instance(seed):
    fx = _random_instance(np.random.default_rng(seed), seed)
    return fx, real_measure_system(fx.params, fx.data, fx.conv)


@settings(max_examples=15)
@given(seeds)
def test_filter_matches_direct_conditioning(seed):
    fx, system = _instance(seed)
    f = kalman_filter(system, fx.data)
    for t in range(fx.data.T + 1):
        direct = cond_dist_state_given_F(system, fx.data, t)
        assert np.allclose(f.filtered_mean[t], direct.mean, atol=1e-8)
        assert np.allclose(f.filtered_cov[t], direct.cov, atol=1e-8)


@settings(max_examples=15)
@given(seeds)
def test_smoother_matches_full_conditioning(seed):
    fx, system = _instance(seed)
    s = kalman_smoother(kalman_filter(system, fx.data))
    for t, direct in enumerate(smoothed_by_conditioning(system, fx.data)):
        assert np.allclose(s.mean[t], direct.mean, atol=1e-8)
        assert np.allclose(s.cov[t], direct.cov, atol=1e-8)


@settings(max_examples=15)
@given(seeds)
def test_covariances_are_psd_and_smoothing_shrinks_them(seed):
    fx, system = _instance(seed)
    f = kalman_filter(system, fx.data)
    s = kalman_smoother(f)
    assert s.loglik == f.loglik
    for t in range(fx.data.T + 1):
        assert is_psd(f.filtered_cov[t]) and is_psd(s.cov[t])
        assert is_psd(f.filtered_cov[t] - s.cov[t])
    assert np.allclose(s.mean[-1], f.filtered_mean[-1]) and np.allclose(s.cov[-1], f.filtered_cov[-1])


@settings(max_examples=10)
@given(seeds)
def test_one_step_forecast_is_the_next_prediction(seed):
    fx, system = _instance(seed)
    T0 = fx.data.T - 1
    full = kalman_filter(system, fx.data)
    fc = kalman_forecast(kalman_filter(system, fx.data, T=T0), system, fx.data, 1)
    assert np.allclose(fc.state_mean[0], full.predicted_mean[T0 + 1], atol=1e-12)
    assert np.allclose(fc.state_cov[0], full.predicted_cov[T0 + 1], atol=1e-12)


def test_forecast_needs_coefficients_beyond_the_sample():
    fx, system = _instance(3)
    f = kalman_filter(system, fx.data)
    with pytest.raises(ValueError):
        kalman_forecast(f, system, fx.data, 1)


@settings(max_examples=10)
@given(seeds)
def test_closed_form_propagator_agrees_with_the_product(seed):
    fx, system = _instance(seed)
    for beta in range(1, fx.data.T + 1):
        for s in range(beta, fx.data.T + 1):
            assert np.allclose(propagator(system, beta, s), propagator_closed_form(system, beta, s),
                               atol=1e-12)
