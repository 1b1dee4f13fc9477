import numpy as np
import pytest

from pcv.em import (EMOptions, e_step, em_iteration, em_run, expected_complete_loglik,
                    initial_parameters, q_gradient, smoothed_value)
from pcv.kalman import SmootherOutput
from pcv.model import DividendConvention
from pcv.synthetic import random_parameters, synthetic_panel
from pcv.verify import EM_FIXED, EM_TRUTH, em_study_fit


@pytest.fixture(scope="module", params=["book", "price"])
def small_panel(request):
    conv = DividendConvention(request.param)
    params = random_parameters(np.random.default_rng(5), n=2, ell=1, p=1, l=1, noise_scale=0.02)
    data = synthetic_panel(params, 40, seed=6, conv=conv, pay_prob=0.8).data
    return data, conv


def test_plain_em_never_lowers_the_likelihood(small_panel):
    data, conv = small_panel
    start = initial_parameters(data, conv)
    _, trace = em_run(start, data, conv, EMOptions(max_iter=25))
    assert trace.iterations >= 2 and trace.is_monotone(1e-8)


def test_accelerated_em_never_lowers_the_likelihood(small_panel):
    data, conv = small_panel
    _, trace = em_run(initial_parameters(data, conv), data, conv,
                      EMOptions(max_iter=25, accelerate=True))
    assert trace.is_monotone(1e-8)


def test_m_step_raises_the_expected_complete_loglik(small_panel):
    data, conv = small_panel
    params = initial_parameters(data, conv)
    q = e_step(params, data, conv)
    new, _ = em_iteration(q, data)
    before = expected_complete_loglik(params, data, conv, q.smoothed)
    assert expected_complete_loglik(new, data, conv, q.smoothed) >= before - 1e-9 * abs(before)


def test_study_fit_is_a_stationary_point():
    data, est, trace = em_study_fit(1)
    assert trace.is_monotone(1e-8)
    grad = q_gradient(est, data, DividendConvention.BOOK, EM_FIXED)
    assert "Sigma_0" not in grad
    assert max(float(np.abs(g).max()) for g in grad.values()) <= 1e-4
    assert np.array_equal(est.Sigma_0, EM_TRUTH.Sigma_0)


def test_value_equals_book_when_the_smoothed_ratio_is_zero(small_panel):
    data, _ = small_panel
    k = 2 * data.n
    zero = SmootherOutput(mean=np.zeros((data.T + 1, k)), cov=np.zeros((data.T + 1, k, k)),
                          lag_cov=np.zeros((data.T, k, k)), gains=np.zeros((data.T, k, k)),
                          loglik=0.0)
    assert np.array_equal(smoothed_value(zero, data), np.exp(data.log_book))
