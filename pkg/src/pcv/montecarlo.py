"""Monte Carlo simulation of the linear Gaussian system under any measure.

Paths are generated in fixed-size blocks.  Each block owns a Philox stream
keyed by ``(seed, block index)``, so results do not depend on how many
workers run the blocks or in which order they finish.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linalg import psd_sqrt
from .model import DividendConvention, PanelData
from .stacked import StackedSystem, StateBelief, y_star

DEFAULT_BLOCK = 1 << 14


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    seed: int = 0
    t_start: int = 0
    t_end: int | None = None
    antithetic: bool = False
    block_size: int = DEFAULT_BLOCK

    def draws(self) -> int:
        """Independent normal draws per path set (pairs count once when antithetic)."""
        return self.n_paths


@dataclass(frozen=True)
class PathSet:
    """Simulated trajectories for times t_start..t_end.

    Arrays indexed by time have ``H + 1`` slots where slot 0 is ``t_start``;
    quantities known at ``t_start`` are copied from the data.  With antithetic
    sampling, path ``2k + 1`` mirrors path ``2k``.
    """

    t_start: int
    b_tilde: np.ndarray    # N x (H+1) x n, slot 0 observed
    z: np.ndarray          # N x (H+1) x ell, slot 0 observed
    m: np.ndarray          # N x (H+1) x n
    u: np.ndarray          # N x (H+1) x n, book-growth noise, slot 0 unused
    log_book: np.ndarray   # N x (H+1) x n
    log_discount: np.ndarray  # N x (H+1), ln(D_s / D_t)
    antithetic: bool

    @property
    def n_paths(self) -> int:
        return self.m.shape[0]

    @property
    def horizon(self) -> int:
        return self.m.shape[1] - 1

    @property
    def log_price(self) -> np.ndarray:
        return self.m + self.log_book

    def slot(self, s: int) -> int:
        return s - self.t_start

    def log_dividend(self, data: PanelData, conv: DividendConvention) -> np.ndarray:
        """Log dividends for slots 1..H (slot 0 is NaN)."""
        out = np.full(self.m.shape, np.nan)
        s = np.arange(self.t_start + 1, self.t_start + self.horizon + 1)
        delta = data.delta_tilde[s - 1]
        base = self.log_book if DividendConvention(conv) is DividendConvention.BOOK else self.log_price
        out[:, 1:] = delta[None] + base[:, :-1]
        return out

    def gross_return(self, data: PanelData, conv: DividendConvention, g: np.ndarray,
                     mu: np.ndarray) -> np.ndarray:
        """Log-linear gross returns (P_s + d_s) / P_{s-1} for slots 1..H.

        Uses the same expansion as the model, so under the risk-neutral measure
        its log is exactly r_s - Sigma_uu/2 + u_s.  ``g`` and ``mu`` are the
        linearization arrays (T x n).
        """
        s = np.arange(self.t_start + 1, self.t_start + self.horizon + 1)
        P = self.log_price
        gs, ms = g[s - 1][None], mu[s - 1][None]
        pays = np.isfinite(ms)
        d = self.log_dividend(data, conv)[:, 1:]
        x = np.where(pays, d - P[:, 1:] - np.where(pays, ms, 0.0), 0.0)
        log_r = P[:, 1:] - P[:, :-1] + np.log(gs) + (1.0 - 1.0 / gs) * x
        out = np.full(P.shape, np.nan)
        out[:, 1:] = np.exp(log_r)
        return out


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("PCV_THREADS", "1")))
    except ValueError:
        return 1


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))


def _block_layout(config: SimConfig) -> list[tuple[int, int]]:
    """(block index, paths in block); antithetic blocks hold pairs."""
    per = config.block_size
    total = config.n_paths
    out = []
    k = 0
    while total > 0:
        m = min(per, total)
        out.append((k, m))
        total -= m
        k += 1
    return out


def _simulate_block(system: StackedSystem, data: PanelData, config: SimConfig, t_end: int,
                    state_mean: np.ndarray, state_root: np.ndarray, block: int,
                    count: int) -> PathSet:
    rng = _block_rng(config.seed, block)
    t = config.t_start
    H = t_end - t
    n, ell, lp = system.n, system.ell, system.ell * system.p
    ns, nt = system.n_star, system.n_tilde
    base = count // 2 if config.antithetic else count
    n2 = 2 * n

    state_noise = rng.standard_normal((base, n2))
    xi_std = rng.standard_normal((base, H, nt)) if H > 0 else np.zeros((base, 0, nt))
    if config.antithetic:
        state_noise = np.stack([state_noise, -state_noise], axis=1).reshape(-1, n2)
        xi_std = np.stack([xi_std, -xi_std], axis=1).reshape(-1, H, nt)
    root_xi = psd_sqrt(system.Sigma_xi)
    xi = xi_std @ root_xi.T

    N = state_noise.shape[0]
    x = np.zeros((N, ns))
    x[:, : n + lp] = y_star(data, t)
    x[:, system.state_index] = state_mean + state_noise @ state_root.T
    nu_star = np.zeros((system.T, ns))
    nu_star[:, system.x_index] = system.nu

    b = np.zeros((N, H + 1, n))
    z = np.zeros((N, H + 1, ell))
    m = np.zeros((N, H + 1, n))
    u = np.full((N, H + 1, n), np.nan)
    b[:, 0] = data.b_tilde[t - 1] if t >= 1 else 0.0
    z[:, 0] = data.z_lags[t][:ell]
    m[:, 0] = x[:, n + lp: n + lp + n]
    for k in range(H):
        s = t + 1 + k
        x = x @ system.transition(s).T + (system.Q0_inv(s) @ nu_star[s - 1]) \
            + xi[:, k] @ system.noise_loading(s).T
        b[:, k + 1] = x[:, :n]
        z[:, k + 1] = x[:, n:n + ell]
        m[:, k + 1] = x[:, n + lp: n + lp + n]
        u[:, k + 1] = xi[:, k, :n]
    log_book = data.log_book[t][None, None, :] + np.concatenate(
        [np.zeros((N, 1, n)), np.cumsum(b[:, 1:], axis=1)], axis=1)
    # the spot rate for period s is the first component of z_{s-1}
    log_discount = np.concatenate([np.zeros((N, 1)), -np.cumsum(z[:, :H, 0], axis=1)], axis=1)
    return PathSet(t_start=t, b_tilde=b, z=z, m=m, u=u, log_book=log_book,
                   log_discount=log_discount, antithetic=config.antithetic)


def _concat(parts: list[PathSet]) -> PathSet:
    first = parts[0]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts], axis=0)  # noqa: E731
    return PathSet(t_start=first.t_start, b_tilde=cat("b_tilde"), z=cat("z"), m=cat("m"),
                   u=cat("u"), log_book=cat("log_book"), log_discount=cat("log_discount"),
                   antithetic=first.antithetic)


def _prepare(system: StackedSystem, data: PanelData, config: SimConfig,
             belief: StateBelief | None):
    if config.antithetic and (config.n_paths % 2 or config.block_size % 2):
        raise ValueError("antithetic sampling needs even n_paths and block_size")
    t_end = system.T if config.t_end is None else config.t_end
    if not 0 <= config.t_start <= t_end <= system.T:
        raise ValueError("need 0 <= t_start <= t_end <= T")
    if belief is None:
        if config.t_start != 0:
            raise ValueError("a state belief is required when starting after time 0")
        mean = np.concatenate([system.mu_0, system.mu_0])
        cov = np.kron(np.ones((2, 2)), system.Sigma_0)
    else:
        mean, cov = belief.mean, belief.cov
    return t_end, np.asarray(mean, float), psd_sqrt(cov)


def simulate(system: StackedSystem, data: PanelData, config: SimConfig,
             belief: StateBelief | None = None) -> PathSet:
    """Simulate paths from ``config.t_start`` to ``config.t_end``.

    The state at ``t_start`` is drawn from ``belief`` (two-stage simulation);
    a zero-covariance belief conditions on the state exactly.  Without a
    belief the run starts at time 0 from the prior.
    """
    t_end, mean, root = _prepare(system, data, config, belief)
    layout = _block_layout(config)
    job = lambda kb: _simulate_block(system, data, config, t_end, mean, root, *kb)  # noqa: E731
    workers = _worker_count()
    if workers > 1 and len(layout) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(job, layout))
    else:
        parts = [job(kb) for kb in layout]
    return _concat(parts)


def expectation(system: StackedSystem, data: PanelData, config: SimConfig,
                payoff: Callable[[PathSet], np.ndarray],
                belief: StateBelief | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of ``payoff`` without holding all paths in memory.

    ``payoff`` maps a block of paths to an array whose first axis is the path.
    """
    t_end, mean, root = _prepare(system, data, config, belief)
    layout = _block_layout(config)

    def job(kb):
        return np.asarray(payoff(_simulate_block(system, data, config, t_end, mean, root, *kb)),
                          dtype=float)

    workers = _worker_count()
    if workers > 1 and len(layout) > 1:
        with ThreadPoolExecutor(workers) as pool:
            values = list(pool.map(job, layout))
    else:
        values = [job(kb) for kb in layout]
    return estimate(np.concatenate(values, axis=0), config.antithetic)


def estimate(values: np.ndarray, antithetic: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and its standard error; antithetic pairs are averaged first."""
    values = np.asarray(values, dtype=float)
    if antithetic:
        values = 0.5 * (values[0::2] + values[1::2])
    N = values.shape[0]
    mean = values.mean(axis=0)
    if N < 2:
        return mean, np.zeros_like(mean)
    se = values.std(axis=0, ddof=1) / np.sqrt(N)
    return mean, se
