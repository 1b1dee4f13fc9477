import numpy as np

from pcv.hedging import known_state_beliefs
from pcv.montecarlo import SimConfig, estimate, expectation, simulate
from pcv.stacked import risk_neutral_system


def test_same_config_gives_identical_paths(book_fixture):
    system = book_fixture.risk_neutral()
    cfg = SimConfig(n_paths=300, seed=9, block_size=128)
    a = simulate(system, book_fixture.data, cfg)
    b = simulate(system, book_fixture.data, cfg)
    assert np.array_equal(a.m, b.m) and np.array_equal(a.b_tilde, b.b_tilde)


def test_worker_count_does_not_change_results(book_fixture, monkeypatch):
    system = book_fixture.risk_neutral()
    cfg = SimConfig(n_paths=300, seed=9, block_size=64)
    monkeypatch.setenv("PCV_THREADS", "1")
    serial = simulate(system, book_fixture.data, cfg)
    monkeypatch.setenv("PCV_THREADS", "3")
    threaded = simulate(system, book_fixture.data, cfg)
    assert np.array_equal(serial.m, threaded.m) and np.array_equal(serial.z, threaded.z)


def test_antithetic_pairs_mirror_the_noise(book_fixture):
    system = book_fixture.risk_neutral()
    P = simulate(system, book_fixture.data, SimConfig(n_paths=64, seed=1, antithetic=True))
    assert np.allclose(P.u[0::2, 1:], -P.u[1::2, 1:])


def test_streaming_expectation_matches_stored_paths(book_fixture):
    system = book_fixture.risk_neutral()
    cfg = SimConfig(n_paths=500, seed=4, block_size=100)
    mean, se = expectation(system, book_fixture.data, cfg, lambda P: P.m[:, -1])
    P = simulate(system, book_fixture.data, cfg)
    ref_mean, ref_se = estimate(P.m[:, -1])
    assert np.array_equal(mean, ref_mean) and np.array_equal(se, ref_se)


def test_estimate_averages_antithetic_pairs():
    mean, se = estimate(np.array([1.0, -1.0, 3.0, -1.0]), antithetic=True)
    assert mean == 0.5 and se == 0.5


def test_initial_slot_copies_observed_values(price_fixture):
    data = price_fixture.data
    system = risk_neutral_system(price_fixture.params, data, price_fixture.conv)
    state = np.full(2 * data.n, 0.1)
    P = simulate(system, data, SimConfig(n_paths=4, seed=0, t_start=3),
                 belief=known_state_beliefs(np.tile(state[:data.n], (4, 1)))[3])
    assert np.allclose(P.b_tilde[:, 0], data.b_tilde[2])
    assert np.allclose(P.z[:, 0], data.z[2])
    assert np.allclose(P.m[:, 0], 0.1)
