import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pcv.kalman import kalman_filter
from pcv.linalg import is_psd
from pcv.pricing import (DegenerateVariance, IncompleteLifeTable, InsuranceSpec, LifeTable,
                         Product, bond_price, forward_shift, insurance_premium,
                         lognormal_call_put, option_quote, pricing_state, terminal_log_price_dist)

# E[(e^X - 1)^+] for X ~ N(0, 1), from adaptive quadrature of the integrand
LOGNORMAL_CALL_QUADRATURE = 0.88714297883500493

mus = st.floats(-2, 2)
variances = st.floats(1e-4, 2)
strikes = st.floats(0.05, 5)


@given(mus, variances, strikes)
def test_call_put_parity(mu, var, K):
    call, put = lognormal_call_put(mu, var, K)
    assert call - put == pytest.approx(np.exp(mu + var / 2) - K, abs=1e-12)
    assert call >= 0 and put >= 0


@given(mus, variances, strikes, strikes)
def test_call_falls_and_put_rises_with_strike(mu, var, K1, K2):
    lo, hi = sorted((K1, K2))
    c_lo, p_lo = lognormal_call_put(mu, var, lo)
    c_hi, p_hi = lognormal_call_put(mu, var, hi)
    assert c_hi <= c_lo + 1e-12 and p_hi >= p_lo - 1e-12


def test_unit_lognormal_call_matches_quadrature():
    call, _ = lognormal_call_put(0.0, 1.0, 1.0)
    assert call == pytest.approx(LOGNORMAL_CALL_QUADRATURE, abs=1e-12)


def test_vanishing_variance_tends_to_intrinsic_value():
    with pytest.raises(DegenerateVariance):
        lognormal_call_put(0.1, 0.0, 1.0)
    with pytest.warns(RuntimeWarning):
        call, put = lognormal_call_put(0.1, 0.0, 1.0, strict=False)
    assert call == pytest.approx(np.expm1(0.1)) and put == 0.0
    near, _ = lognormal_call_put(0.1, 1e-12, 1.0)
    assert near == pytest.approx(call, abs=1e-6)


def test_nonpositive_strike_is_rejected():
    with pytest.raises(ValueError):
        lognormal_call_put(0.0, 1.0, 0.0)


def test_broadcasting_returns_arrays():
    call, put = lognormal_call_put(np.zeros(3), 1.0, [0.5, 1.0, 2.0])
    assert call.shape == (3,) and np.all(np.diff(call) < 0)


# -------------------------------------------------------------------------
# bonds, forward measure and terminal prices
# -------------------------------------------------------------------------

def _filtered(fx, t):
    system = fx.risk_neutral()
    return pricing_state(system, fx.data, t, belief=kalman_filter(system, fx.data, T=t).belief(t))


@pytest.mark.parametrize("which", ["book_fixture", "price_fixture"])
def test_one_period_bond_is_the_known_spot_rate(which, request):
    fx = request.getfixturevalue(which)
    for t in range(fx.data.T):
        ps = _filtered(fx, t)
        assert bond_price(ps, t + 1) == math.exp(-fx.data.r_tilde[t])


def test_next_date_forward_measure_needs_no_shift(book_fixture):
    ps = _filtered(book_fixture, 2)
    shift = forward_shift(ps, 3)
    assert np.array_equal(shift.mean, ps.moments.mean)
    assert not shift.c_hat.any()


@pytest.mark.parametrize("which", ["book_fixture", "price_fixture"])
def test_option_quotes_satisfy_parity(which, request):
    fx = request.getfixturevalue(which)
    ps = _filtered(fx, 3)
    for k in range(4, fx.data.T + 1):
        q = option_quote(ps, [0.8, 1.3], k)
        assert np.abs(q.parity_gap).max() <= 1e-12


def test_knowing_the_state_narrows_the_terminal_law(book_fixture):
    fx = book_fixture
    ps_f = _filtered(fx, 3)
    ps_g = pricing_state(fx.risk_neutral(), fx.data, 3, state=ps_f.belief.mean)
    for k in range(4, fx.data.T + 1):
        wide, narrow = terminal_log_price_dist(ps_f, k), terminal_log_price_dist(ps_g, k)
        assert narrow.info == "G" and is_psd(wide.cov - narrow.cov)
        assert np.allclose(wide.mean, narrow.mean)


def test_pricing_date_range_is_checked(book_fixture):
    ps = _filtered(book_fixture, 3)
    with pytest.raises(ValueError):
        bond_price(ps, 3)
    with pytest.raises(ValueError):
        pricing_state(book_fixture.risk_neutral(), book_fixture.data, 3)


# -------------------------------------------------------------------------
# life tables and premiums
# -------------------------------------------------------------------------

mortality = arrays(np.float64, st.integers(2, 12), elements=st.floats(0.0, 0.5))


@given(mortality, st.data())
def test_life_table_probabilities_add_up(q, data):
    table = LifeTable.from_mortality(50.0, q)
    T = len(q)
    t = data.draw(st.integers(0, T - 1))
    if table.survival(50.0, t) == 0:
        return
    total = sum(table.death_in_year(50.0, t, k) for k in range(t, T)) + table.survival_from(50.0, t, T)
    assert total == pytest.approx(1.0, abs=1e-12)
    survival = [p for _, _, p in table.rows()]
    assert survival[0] == 1.0 and all(b <= a for a, b in zip(survival, survival[1:]))


def test_life_table_validation():
    with pytest.raises(IncompleteLifeTable):
        LifeTable([(40, 0, 1.0), (40, 2, 0.9)])
    with pytest.raises(ValueError):
        LifeTable([(40, 0, 1.0), (40, 1, 0.9), (40, 2, 0.95)])
    with pytest.raises(IncompleteLifeTable):
        LifeTable.from_mortality(40, [0.1]).survival(40, 5)
    assert LifeTable([(40, 1, 0.9)]).survival(40, 0) == 1.0


@pytest.fixture(scope="module")
def insurance_setup(book_fixture):
    table = LifeTable.from_mortality(40.0, np.linspace(0.01, 0.05, 10))
    return _filtered(book_fixture, 2), table


def _spec(product, F=(1.0, 1.5), G=(1.0, 1.2)):
    return InsuranceSpec(product, np.array(F), np.array(G), 40.0, 8)


def test_unit_linked_minus_segregated_is_the_fund_forward(insurance_setup):
    ps, table = insurance_setup
    ul = insurance_premium(ps, _spec(Product.UL_ENDOW), table)
    seg = insurance_premium(ps, _spec(Product.SEG_ENDOW), table)
    q = option_quote(ps, 1.0, 8)
    expected = table.survival_from(40.0, 2, 8) * q.bond * np.array([1.0, 1.5]) * q.forward
    assert np.allclose(ul - seg, expected, rtol=1e-12)


@given(st.floats(0.1, 10.0))
def test_premiums_scale_with_units_and_guarantee(insurance_setup, scale):
    ps, table = insurance_setup
    for product in Product:
        base = insurance_premium(ps, _spec(product), table)
        scaled = insurance_premium(ps, _spec(product, (scale, 1.5 * scale), (scale, 1.2 * scale)),
                                   table)
        assert np.allclose(scaled, scale * base, rtol=1e-10)


def test_term_cover_without_deaths_costs_nothing(book_fixture):
    ps = _filtered(book_fixture, 2)
    table = LifeTable.from_mortality(40.0, np.zeros(10))
    for product in (Product.SEG_TERM, Product.UL_TERM):
        assert not insurance_premium(ps, _spec(product), table).any()


def test_segregated_endowment_with_certain_survival_is_a_put(book_fixture):
    ps = _filtered(book_fixture, 2)
    table = LifeTable.from_mortality(40.0, np.zeros(10))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        seg = insurance_premium(ps, _spec(Product.SEG_ENDOW, F=(1.0, 1.0)), table)
    assert np.array_equal(seg, option_quote(ps, [1.0, 1.2], 8).put)
