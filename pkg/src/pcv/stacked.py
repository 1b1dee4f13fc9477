"""Risk-neutral dynamics, the VAR(1) companion stacking and Gaussian path laws.

The stacked state is x*_t = (b~_t, z*_t, m~*_t) of length 3n + ell*p, where
z*_t = (z_t, ..., z_{t-p+1}) and m~*_t = (m~_t, m~_{t-1}).  The reduced vector
x_t = (b~_t, z_t, m~_t) has length 2n + ell.  All measures share one container,
:class:`StackedSystem`; they differ only in intercepts, the loading of lagged
economic variables on book growth (``E``) and the VAR coefficients.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .linalg import pinv_sym, sym
from .model import (DividendConvention, Linearization, ModelParameters, PanelData,
                    RealSystemCoefficients, linearize_arrays, real_system_arrays)

CONDITIONING_CUTOFF = 1e-10


class Measure(str, Enum):
    REAL = "real"
    RISK_NEUTRAL = "risk_neutral"
    FORWARD = "forward"


@dataclass(frozen=True)
class StateBelief:
    """Gaussian belief about m~*_t = (m~_t, m~_{t-1})."""

    t: int
    mean: np.ndarray
    cov: np.ndarray
    kind: str = "filtered"

    @property
    def n(self) -> int:
        return self.mean.size // 2

    @property
    def m_mean(self) -> np.ndarray:
        return self.mean[: self.n]

    @property
    def m_cov(self) -> np.ndarray:
        return self.cov[: self.n, : self.n]


@dataclass(frozen=True)
class RiskNeutralCoefficients:
    nu_b_tilde: np.ndarray  # T x n
    E: np.ndarray           # T x n x ell*p
    nu_z_tilde: np.ndarray  # T x ell
    A_tilde: np.ndarray     # ell x ell*p
    nu_m: np.ndarray        # T x n


@dataclass(frozen=True)
class StackedSystem:
    """Time-varying linear Gaussian system for (b~, z, m~) under one measure."""

    nu: np.ndarray        # T x n_tilde intercepts of (b~, z, m~)
    Psi_b: np.ndarray     # T x n x 2n
    E: np.ndarray         # T x n x ell*p
    A: np.ndarray         # ell x ell*p
    G: np.ndarray         # T x n
    Sigma_xi: np.ndarray  # n_tilde x n_tilde
    mu_0: np.ndarray
    Sigma_0: np.ndarray
    measure: Measure = Measure.REAL
    horizon: tuple[int, int] | None = None  # (t, u) for forward measures
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # dimensions -----------------------------------------------------------
    @property
    def T(self) -> int:
        return self.nu.shape[0]

    @property
    def n(self) -> int:
        return self.G.shape[1]

    @property
    def ell(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.A.shape[1] // self.A.shape[0]

    @property
    def n_tilde(self) -> int:
        return 2 * self.n + self.ell

    @property
    def n_star(self) -> int:
        return 3 * self.n + self.ell * self.p

    # selectors ------------------------------------------------------------
    @property
    def x_index(self) -> np.ndarray:
        """Positions of (b~, z, m~) inside x*; J_x as an index array."""
        n, ell, lp = self.n, self.ell, self.ell * self.p
        return np.concatenate([np.arange(n), n + np.arange(ell), n + lp + np.arange(n)])

    @property
    def y_index(self) -> np.ndarray:
        return np.arange(self.n + self.ell)

    @property
    def state_index(self) -> np.ndarray:
        n, lp = self.n, self.ell * self.p
        return n + lp + np.arange(2 * n)

    @property
    def J_x(self) -> np.ndarray:
        return np.eye(self.n_star)[self.x_index]

    @property
    def Sigma_uu(self) -> np.ndarray:
        return self.Sigma_xi[: self.n, : self.n]

    # companion blocks -----------------------------------------------------
    @property
    def A_star(self) -> np.ndarray:
        return companion(self.A)

    @property
    def C(self) -> np.ndarray:
        n = self.n
        eye = np.eye(n)
        return np.block([[eye, np.zeros((n, n))], [eye, np.zeros((n, n))]])

    def Q0(self, s: int) -> np.ndarray:
        out = np.eye(self.n_star)
        out[: self.n, self.state_index] = -self.Psi_b[s - 1]
        return out

    def Q0_inv(self, s: int) -> np.ndarray:
        out = np.eye(self.n_star)
        out[: self.n, self.state_index] = self.Psi_b[s - 1]
        return out

    def Q1(self, s: int) -> np.ndarray:
        n, lp = self.n, self.ell * self.p
        out = np.zeros((self.n_star, self.n_star))
        out[:n, n:n + lp] = self.E[s - 1]
        out[n:n + lp, n:n + lp] = self.A_star
        out[n + lp:, n + lp:] = self.C
        return out

    def G_star(self, s: int) -> np.ndarray:
        n, ell, lp = self.n, self.ell, self.ell * self.p
        z_sel = np.zeros(lp)
        z_sel[:ell] = 1.0
        m_sel = np.concatenate([np.ones(n), np.zeros(n)])
        return np.diag(np.concatenate([self.G[s - 1], z_sel, m_sel]))

    def transition(self, s: int) -> np.ndarray:
        """Q_{0,s}^{-1} Q_{1,s}."""
        key = ("F", s)
        if key not in self._cache:
            self._cache[key] = self.Q0_inv(s) @ self.Q1(s)
        return self._cache[key]

    def noise_loading(self, s: int) -> np.ndarray:
        """Q_{0,s}^{-1} G*_s J_x', mapping xi_s into x*_s."""
        key = ("N", s)
        if key not in self._cache:
            self._cache[key] = (self.Q0_inv(s) @ self.G_star(s))[:, self.x_index]
        return self._cache[key]

    def with_intercepts(self, nu: np.ndarray, measure: Measure, horizon=None) -> "StackedSystem":
        return replace(self, nu=np.asarray(nu, dtype=float), measure=measure, horizon=horizon,
                       _cache={})


def companion(A: np.ndarray) -> np.ndarray:
    ell, lp = A.shape
    out = np.zeros((lp, lp))
    out[:ell] = A
    out[ell:, : lp - ell] = np.eye(lp - ell)
    return out


# -------------------------------------------------------------------------
# measure construction
# -------------------------------------------------------------------------

def real_measure_system(params: ModelParameters, data: PanelData,
                        conv: DividendConvention = DividendConvention.BOOK,
                        lin: Linearization | None = None) -> StackedSystem:
    lin = lin if lin is not None else linearize_arrays(
        params, data.delta_tilde, data.pays_dividend, data.psi, conv)
    real = real_system_arrays(params, lin, data.delta_tilde, data.psi, conv)
    return _system_from_real(params, real)


def _system_from_real(params: ModelParameters, real: RealSystemCoefficients) -> StackedSystem:
    T, n = real.G.shape
    return StackedSystem(
        nu=np.hstack([real.nu_b, real.nu_z, real.nu_m]),
        Psi_b=real.Psi_b,
        E=np.zeros((T, n, params.A.shape[1])),
        A=params.A,
        G=real.G,
        Sigma_xi=params.Sigma_xi,
        mu_0=params.mu_0,
        Sigma_0=params.Sigma_0,
        measure=Measure.REAL,
    )


def girsanov_kernel(params: ModelParameters, g_t: np.ndarray, r_tilde_t: float,
                    ck_psi_t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Market price of risk theta_t and its loading Theta_t (n_tilde x n)."""
    n = params.n
    solve = np.linalg.solve(params.Sigma_uu, np.eye(n))
    Theta = np.vstack([np.diag(g_t), params.Sigma_vu @ solve, np.zeros((n, n))])
    premium = r_tilde_t * np.ones(n) - ck_psi_t - 0.5 * np.diag(params.Sigma_uu)
    return Theta @ premium, Theta


def risk_neutral_coefficients(real: RealSystemCoefficients, params: ModelParameters,
                              delta: np.ndarray, pays: np.ndarray, h: np.ndarray,
                              psi: np.ndarray) -> RiskNeutralCoefficients:
    n, ell = params.n, params.ell
    T = real.G.shape[0]
    half_var = 0.5 * np.diag(params.Sigma_uu)
    g = real.G
    delta = np.where(pays, delta, 0.0)
    nu_b = -(g - 1.0) * delta - g * half_var - h
    E = np.zeros((T, n, ell * params.p))
    E[:, :, 0] = g
    loading = np.linalg.solve(params.Sigma_uu.T, params.Sigma_vu.T).T  # Sigma_vu Sigma_uu^{-1}
    nu_z = real.nu_z - (psi @ params.C_k.T + half_var) @ loading.T
    A_tilde = params.A.copy()
    A_tilde[:, 0] += loading @ np.ones(n)
    return RiskNeutralCoefficients(nu_b_tilde=nu_b, E=E, nu_z_tilde=nu_z, A_tilde=A_tilde,
                                   nu_m=real.nu_m.copy())


def risk_neutral_system(params: ModelParameters, data: PanelData,
                        conv: DividendConvention = DividendConvention.BOOK,
                        lin: Linearization | None = None) -> StackedSystem:
    return risk_neutral_system_arrays(params, data.delta_tilde, data.pays_dividend, data.psi,
                                      conv, lin)


def risk_neutral_system_arrays(params, delta, pays, psi, conv=DividendConvention.BOOK,
                               lin: Linearization | None = None) -> StackedSystem:
    lin = lin if lin is not None else linearize_arrays(params, delta, pays, psi, conv)
    real = real_system_arrays(params, lin, delta, psi, conv)
    rn = risk_neutral_coefficients(real, params, delta, pays, lin.h, psi)
    return StackedSystem(
        nu=np.hstack([rn.nu_b_tilde, rn.nu_z_tilde, rn.nu_m]),
        Psi_b=real.Psi_b,
        E=rn.E,
        A=rn.A_tilde,
        G=real.G,
        Sigma_xi=params.Sigma_xi,
        mu_0=params.mu_0,
        Sigma_0=params.Sigma_0,
        measure=Measure.RISK_NEUTRAL,
    )


# -------------------------------------------------------------------------
# propagators
# -------------------------------------------------------------------------

def propagator(system: StackedSystem, beta: int, s: int) -> np.ndarray:
    """Pi*_{beta,s}: product of transitions, with Pi*_{s,s} = Q_{0,s}^{-1}."""
    if beta == s:
        return system.Q0_inv(s)
    out = np.eye(system.n_star)
    for a in range(beta + 1, s + 1):
        out = system.transition(a) @ out
    return out


def propagator_closed_form(system: StackedSystem, beta: int, s: int) -> np.ndarray:
    if beta == s:
        return system.Q0_inv(s)
    n, lp = system.n, system.ell * system.p
    k = s - beta
    A_pow = np.linalg.matrix_power(system.A_star, k)
    C_pow = np.linalg.matrix_power(system.C, k)
    out = np.zeros((system.n_star, system.n_star))
    out[:n, n:n + lp] = system.E[s - 1] @ np.linalg.matrix_power(system.A_star, k - 1)
    out[:n, n + lp:] = system.Psi_b[s - 1] @ C_pow
    out[n:n + lp, n:n + lp] = A_pow
    out[n + lp:, n + lp:] = C_pow
    return out


# -------------------------------------------------------------------------
# path laws
# -------------------------------------------------------------------------

@dataclass(frozen=True)
class PathMap:
    """Affine representation x*_s = const_s + M_s m~*_t + sum_beta L[s, beta] xi_beta, s = t+1..t_end."""

    t: int
    const: np.ndarray  # H x n_star
    M: np.ndarray      # H x n_star x 2n
    L: np.ndarray      # H x n_star x H x n_tilde (block lower triangular)


def path_map(system: StackedSystem, t: int, t_end: int, y_star_t: np.ndarray) -> PathMap:
    H = t_end - t
    ns, nt, n = system.n_star, system.n_tilde, system.n
    const = np.zeros((H, ns))
    M = np.zeros((H, ns, 2 * n))
    L = np.zeros((H, ns, H, nt))
    c_prev = np.zeros(ns)
    c_prev[: system.n + system.ell * system.p] = y_star_t
    M_prev = np.zeros((ns, 2 * n))
    M_prev[system.state_index] = np.eye(2 * n)
    L_prev = np.zeros((ns, H, nt))
    nu_star = np.zeros((system.T, ns))
    nu_star[:, system.x_index] = system.nu
    for k in range(H):
        s = t + 1 + k
        F = system.transition(s)
        const[k] = F @ c_prev + system.Q0_inv(s) @ nu_star[s - 1]
        M[k] = F @ M_prev
        L[k] = np.einsum("ij,jbk->ibk", F, L_prev)
        L[k, :, k] = system.noise_loading(s)
        c_prev, M_prev, L_prev = const[k], M[k], L[k]
    return PathMap(t=t, const=const, M=M, L=L)


@dataclass(frozen=True)
class CondMoments:
    """Gaussian law of the reduced path (x_{t+1}, ..., x_{t_end}) given time-t information.

    ``noise_loading`` keeps the map from the innovations (xi_{t+1}, ...) to the
    path so that covariances with individual innovations stay available.
    """

    t: int
    mean: np.ndarray           # H x n_tilde
    cov: np.ndarray            # H x n_tilde x H x n_tilde
    state_loading: np.ndarray  # H x n_tilde x 2n
    noise_loading: np.ndarray  # H x n_tilde x H x n_tilde
    state_cov: np.ndarray      # 2n x 2n
    info: str
    measure: Measure

    @property
    def horizon(self) -> int:
        return self.mean.shape[0]

    def mean_at(self, s: int) -> np.ndarray:
        return self.mean[s - self.t - 1]

    def cov_at(self, s1: int, s2: int) -> np.ndarray:
        return self.cov[s1 - self.t - 1, :, s2 - self.t - 1, :]


def _moments(system: StackedSystem, t: int, t_end: int, y_star_t: np.ndarray,
             state_mean: np.ndarray, state_cov: np.ndarray, info: str) -> CondMoments:
    pm = path_map(system, t, t_end, y_star_t)
    H, nt = t_end - t, system.n_tilde
    xi = system.x_index
    M = pm.M[:, xi, :]
    L = pm.L[:, xi, :, :]
    mean = pm.const[:, xi] + M @ state_mean
    Lf = L.reshape(H * nt, H * nt)
    Mf = M.reshape(H * nt, -1)
    cov = Mf @ state_cov @ Mf.T + Lf @ np.kron(np.eye(H), system.Sigma_xi) @ Lf.T
    cov = sym(cov).reshape(H, nt, H, nt)
    return CondMoments(t=t, mean=mean, cov=cov, state_loading=M, noise_loading=L,
                       state_cov=np.asarray(state_cov, dtype=float), info=info,
                       measure=system.measure)


def y_star(data: PanelData, t: int) -> np.ndarray:
    """Observed part of x*_t: (b~_t, z*_t); b~_0 is irrelevant and set to zero."""
    b = data.b_tilde[t - 1] if t >= 1 else np.zeros(data.n)
    return np.concatenate([b, data.z_lags[t]])


def cond_moments_given_G(system: StackedSystem, data: PanelData, t: int,
                         state: np.ndarray, t_end: int | None = None) -> CondMoments:
    """Path law when the state m~*_t is known exactly."""
    t_end = system.T if t_end is None else t_end
    n2 = 2 * system.n
    return _moments(system, t, t_end, y_star(data, t), np.asarray(state, float),
                    np.zeros((n2, n2)), "G")


def cond_moments_given_F(system: StackedSystem, data: PanelData, t: int,
                         belief: StateBelief, t_end: int | None = None) -> CondMoments:
    """Path law when only observables up to t are known; the state enters through ``belief``."""
    t_end = system.T if t_end is None else t_end
    return _moments(system, t, t_end, y_star(data, t), belief.mean, belief.cov, "F")


# -------------------------------------------------------------------------
# direct Gaussian conditioning (filter/smoother oracle)
# -------------------------------------------------------------------------

def joint_law_from_start(system: StackedSystem, data: PanelData, t_end: int):
    """Mean and covariance of (x*_0, ..., x*_{t_end}) given only the prior at time 0."""
    n, ns = system.n, system.n_star
    m0 = np.concatenate([system.mu_0, system.mu_0])
    P0 = np.kron(np.ones((2, 2)), system.Sigma_0)
    pm = path_map(system, 0, t_end, y_star(data, 0))
    H = t_end
    mean = np.zeros((H + 1, ns))
    mean[0, : n + system.ell * system.p] = y_star(data, 0)
    mean[0, system.state_index] = m0
    mean[1:] = pm.const + pm.M @ m0
    M_all = np.zeros((H + 1, ns, 2 * n))
    M_all[0, system.state_index] = np.eye(2 * n)
    M_all[1:] = pm.M
    L_all = np.zeros((H + 1, ns, H, system.n_tilde))
    L_all[1:] = pm.L
    Mf = M_all.reshape((H + 1) * ns, 2 * n)
    Lf = L_all.reshape((H + 1) * ns, H * system.n_tilde)
    cov = Mf @ P0 @ Mf.T + Lf @ np.kron(np.eye(H), system.Sigma_xi) @ Lf.T
    return mean, sym(cov)


def _condition(system: StackedSystem, data: PanelData, t_obs: int, targets: list[int]):
    ns = system.n_star
    mean, cov = joint_law_from_start(system, data, max(t_obs, max(targets)))
    y_rows = np.concatenate([s * ns + system.y_index for s in range(1, t_obs + 1)])
    y_obs = np.concatenate([np.concatenate([data.b_tilde[s - 1], data.z[s - 1]])
                            for s in range(1, t_obs + 1)])
    flat_mean = mean.ravel()
    S_yy = cov[np.ix_(y_rows, y_rows)]
    S_inv, dropped = pinv_sym(S_yy, CONDITIONING_CUTOFF)
    if dropped:
        warnings.warn("observation covariance numerically singular; using pseudo-inverse",
                      RuntimeWarning, stacklevel=3)
    innovation = y_obs - flat_mean[y_rows]
    out = []
    for tau in targets:
        rows = tau * ns + system.state_index
        S_xy = cov[np.ix_(rows, y_rows)]
        m = flat_mean[rows] + S_xy @ S_inv @ innovation
        P = cov[np.ix_(rows, rows)] - S_xy @ S_inv @ S_xy.T
        out.append((m, sym(P)))
    return out


def cond_dist_state_given_F(system: StackedSystem, data: PanelData, t: int) -> StateBelief:
    """Belief about m~*_t given observations 1..t, by brute-force joint conditioning."""
    if t == 0:
        return StateBelief(0, np.concatenate([system.mu_0, system.mu_0]),
                           np.kron(np.ones((2, 2)), system.Sigma_0), "filtered")
    (m, P), = _condition(system, data, t, [t])
    return StateBelief(t, m, P, "filtered")


def smoothed_by_conditioning(system: StackedSystem, data: PanelData) -> list[StateBelief]:
    T = data.T
    res = _condition(system, data, T, list(range(T + 1)))
    return [StateBelief(t, m, P, "smoothed") for t, (m, P) in enumerate(res)]
