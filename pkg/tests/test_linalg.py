import numpy as np
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pcv.linalg import floor_eigenvalues, is_psd, pinv_sym, psd_sqrt, sym

square = st.integers(1, 4).flatmap(
    lambda k: arrays(np.float64, (k, k), elements=st.floats(-3, 3, allow_nan=False)))


@given(square)
def test_sym_is_symmetric_and_idempotent(m):
    s = sym(m)
    assert np.array_equal(s, s.T)
    assert np.allclose(sym(s), s)


@given(square)
def test_gram_matrix_is_psd_and_has_a_square_root(m):
    g = m @ m.T
    assert is_psd(g)
    root = psd_sqrt(g)
    assert np.allclose(root @ root.T, g, atol=1e-8 * max(1.0, np.abs(g).max()))


@given(square)
def test_floor_eigenvalues_makes_psd(m):
    assert is_psd(floor_eigenvalues(sym(m)))


def test_negative_definite_is_not_psd():
    assert not is_psd(-np.eye(2))


def test_pinv_drops_small_directions():
    m = np.diag([1.0, 1e-15])
    inv, dropped = pinv_sym(m, 1e-12)
    assert dropped
    assert np.allclose(inv, np.diag([1.0, 0.0]))
    inv, dropped = pinv_sym(np.diag([2.0, 4.0]), 1e-12)
    assert not dropped and np.allclose(inv, np.diag([0.5, 0.25]))
