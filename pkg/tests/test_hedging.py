import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcv.hedging import (UnsupportedClaim, claim_value, hedge_path, hedge_ratio, known_state_beliefs,
                         lambda_bar, omega_bar, payoff_value, psi_minus, psi_plus)
from pcv.kalman import kalman_filter
from pcv.linalg import is_psd
from pcv.pricing import InsuranceSpec, LifeTable, OptionSpec, Product, option_price, pricing_state
from pcv.stacked import risk_neutral_system
from pcv.synthetic import synthetic_panel
from pcv.verify import random_psi_setup

TABLE = LifeTable.from_mortality(40.0, np.linspace(0.01, 0.05, 10))


@given(st.integers(0, 2**32 - 1))
def test_psi_plus_minus_parity(seed):
    a = random_psi_setup(np.random.default_rng(seed))
    e1 = a.alpha1 * np.exp(a.mu1 + 0.5 * np.diag(a.Sigma11))
    e2 = a.alpha2 * np.exp(a.mu2 + 0.5 * np.diag(a.Sigma22))
    linear = np.outer(e1, e2) * np.exp(a.Sigma12) - np.outer(e1, a.alpha2 * a.L)
    assert np.allclose(psi_plus(a) - psi_minus(a), linear, atol=1e-12)
    assert np.all(psi_plus(a) >= 0) and np.all(psi_minus(a) >= 0)


@pytest.fixture(scope="module")
def state(book_fixture):
    system = book_fixture.risk_neutral()
    belief = kalman_filter(system, book_fixture.data, T=2).belief(2)
    return pricing_state(system, book_fixture.data, 2, belief=belief)


def test_gain_second_moment_is_symmetric_psd(state):
    Omega = omega_bar(state)
    assert np.allclose(Omega, Omega.T) and is_psd(Omega)


def test_call_minus_put_covariance_is_affine_in_the_strike(state):
    # the discounted strike is random under stochastic rates, so the gap moves linearly with K
    strikes = (0.7, 1.0, 1.6)
    gaps = [lambda_bar(state, OptionSpec("call", K, 6)) - lambda_bar(state, OptionSpec("put", K, 6))
            for K in strikes]
    slope_lo = (gaps[1] - gaps[0]) / (strikes[1] - strikes[0])
    slope_hi = (gaps[2] - gaps[1]) / (strikes[2] - strikes[1])
    assert np.allclose(slope_lo, slope_hi, rtol=1e-9, atol=1e-13)


@pytest.mark.parametrize("product", list(Product))
@given(scale=st.floats(0.1, 10.0))
def test_insurance_covariance_scales_with_the_contract(state, product, scale):
    spec = InsuranceSpec(product, np.array([1.0, 2.0]), np.array([1.1, 1.5]), 40.0, 7)
    big = InsuranceSpec(product, scale * spec.F_star, scale * spec.G_star, 40.0, 7)
    assert np.allclose(lambda_bar(state, big, TABLE), scale * lambda_bar(state, spec, TABLE),
                       rtol=1e-10, atol=1e-15)


def test_hedge_ratio_solves_the_normal_equations(state):
    Omega, Lambda = omega_bar(state), lambda_bar(state, OptionSpec("call", 1.0, 6))
    h, singular = hedge_ratio(Omega, Lambda)
    assert not singular and np.allclose(Omega @ h, Lambda, rtol=1e-9, atol=1e-14)


def test_singular_second_moment_warns_and_uses_the_pseudo_inverse():
    with pytest.warns(RuntimeWarning):
        h, singular = hedge_ratio(np.diag([1.0, 0.0]), np.array([[2.0], [3.0]]))
    assert singular and np.array_equal(h, [[2.0], [0.0]])


def test_claim_without_risk_gets_no_stock(state):
    no_deaths = LifeTable.from_mortality(40.0, np.zeros(10))
    spec = InsuranceSpec(Product.SEG_TERM, np.ones(2), np.ones(2), 40.0, 7)
    Lambda = lambda_bar(state, spec, no_deaths)
    h, _ = hedge_ratio(omega_bar(state), Lambda)
    assert not Lambda.any() and not h.any()


def test_unsupported_claims_are_rejected(state):
    with pytest.raises(UnsupportedClaim):
        lambda_bar(state, object())
    with pytest.raises(ValueError):
        lambda_bar(state, InsuranceSpec(Product.SEG_ENDOW, np.ones(2), np.ones(2), 40.0, 7))


@pytest.mark.filterwarnings("ignore:log-price variance")
def test_known_state_hedge_path_ends_at_the_payoff(book_fixture):
    params, conv = book_fixture.params, book_fixture.conv
    panel = synthetic_panel(params, 8, seed=77, conv=conv)
    system = risk_neutral_system(params, panel.data, conv)
    claim = OptionSpec("put", 1.0, 5)
    beliefs = known_state_beliefs(panel.m)
    hs = hedge_path(system, panel.data, conv, claim, beliefs)
    assert hs.h.shape == (5, 2, 2) and hs.maturity == 5 and not hs.singular.any()
    P_T = np.exp(panel.m[5] + panel.data.log_book[5])
    assert np.allclose(hs.V[5], np.maximum(1.0 - P_T, 0.0))
    ps0 = pricing_state(system, panel.data, 0, belief=beliefs[0], t_end=5)
    assert np.array_equal(hs.V[0], option_price(ps0, claim))
    assert np.array_equal(claim_value(ps0, claim), hs.V[0])


def test_term_insurance_is_worth_nothing_at_maturity(state):
    spec = InsuranceSpec(Product.UL_TERM, np.ones(2), np.ones(2), 40.0, 7)
    assert not payoff_value(spec, state.belief, state.log_book).any()
