import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcv.model import DividendConvention, PhiOutOfDomain, linearize_arrays, state_loading
from pcv.synthetic import dividend_ratios_for, random_parameters

PARAMS = random_parameters(np.random.default_rng(0), n=1, ell=1, p=1, l=1)


@given(st.floats(-12.0, -1e-6))
def test_linearization_constants(phi):
    psi = np.ones((1, 1))
    delta = dividend_ratios_for(PARAMS, psi, np.array([[phi]]), DividendConvention.BOOK)
    lin = linearize_arrays(PARAMS, delta, np.array([[True]]), psi)
    g = lin.g[0, 0]
    assert lin.phi[0, 0] == pytest.approx(phi, abs=1e-12)
    assert g * (1.0 - np.exp(phi)) == pytest.approx(1.0, rel=1e-9)
    assert g > 1.0


def test_non_payers_get_unit_slope_and_no_intercept():
    lin = linearize_arrays(PARAMS, np.zeros((2, 1)), np.array([[False], [False]]), np.ones((2, 1)))
    assert np.all(lin.g == 1.0) and np.all(lin.h == 0.0) and np.all(np.isneginf(lin.mu))


@pytest.mark.parametrize("phi", [0.0, 0.5])
def test_nonnegative_expansion_point_is_rejected(phi):
    psi = np.ones((1, 1))
    delta = dividend_ratios_for(PARAMS, psi, np.array([[phi]]), DividendConvention.BOOK)
    with pytest.raises(PhiOutOfDomain):
        linearize_arrays(PARAMS, delta, np.array([[True]]), psi)


def test_state_loading_conventions():
    g = np.array([[2.0, 3.0]])
    book = state_loading(g, DividendConvention.BOOK)[0]
    price = state_loading(g, DividendConvention.PRICE)[0]
    assert np.array_equal(book, [[-1, 0, 2, 0], [0, -1, 0, 3]])
    assert np.array_equal(price, [[-1, 0, 1, 0], [0, -1, 0, 1]])
