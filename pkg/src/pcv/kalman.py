"""Kalman filter, fixed-interval smoother and forecasts for the price-to-book state.

The state is m~*_t = (m~_t, m~_{t-1}); observations are y_t = (b~_t, z_t) with
lagged economic variables entering as known regressors.  The same code serves
every measure because it only reads a :class:`StackedSystem`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.linalg import LinAlgError

from .linalg import pinv_sym, sym
from .model import PanelData
from .stacked import StackedSystem, StateBelief

SMOOTHER_CUTOFF = 1e-12


class InnovationNotPD(LinAlgError):
    def __init__(self, t: int):
        super().__init__(f"innovation covariance not positive definite at t={t}")
        self.t = t


@dataclass(frozen=True)
class FilterOutput:
    predicted_mean: np.ndarray  # (T+1) x 2n, row 0 unused
    predicted_cov: np.ndarray
    filtered_mean: np.ndarray   # (T+1) x 2n, row 0 is the prior
    filtered_cov: np.ndarray
    innovations: np.ndarray     # T x (n+ell)
    innovation_cov: np.ndarray  # T x (n+ell) x (n+ell)
    gains: np.ndarray           # T x 2n x (n+ell)
    loglik: float
    transition: np.ndarray      # C
    state_noise: np.ndarray     # Sigma_{w*w*}
    nu_state: np.ndarray        # T x 2n

    @property
    def T(self) -> int:
        return self.innovations.shape[0]

    def belief(self, t: int) -> StateBelief:
        return StateBelief(t, self.filtered_mean[t], self.filtered_cov[t], "filtered")


@dataclass(frozen=True)
class SmootherOutput:
    mean: np.ndarray     # (T+1) x 2n
    cov: np.ndarray      # (T+1) x 2n x 2n
    lag_cov: np.ndarray  # T x 2n x 2n, Cov(m*_t, m*_{t+1} | F_T) for t = 0..T-1
    gains: np.ndarray    # T x 2n x 2n
    loglik: float

    def belief(self, t: int) -> StateBelief:
        return StateBelief(t, self.mean[t], self.cov[t], "smoothed")


def _measurement(system: StackedSystem, data: PanelData, T: int):
    n, ell = system.n, system.ell
    k = n + ell
    Psi_y = np.zeros((T, k, 2 * n))
    Psi_y[:, :n] = system.Psi_b[:T]
    A_y = np.concatenate([system.E[:T], np.broadcast_to(system.A, (T, ell, system.A.shape[1]))],
                         axis=1)
    offset = system.nu[:T, :k] + np.einsum("tij,tj->ti", A_y, data.z_lags[:T])
    g_y = np.hstack([system.G[:T], np.ones((T, ell))])
    S_eta = system.Sigma_xi[:k, :k]
    R = g_y[:, :, None] * S_eta[None] * g_y[:, None, :]
    y = np.hstack([data.b_tilde[:T], data.z[:T]])
    return Psi_y, offset, R, y


def _state_parts(system: StackedSystem, T: int):
    n, ell = system.n, system.ell
    nu_state = np.zeros((T, 2 * n))
    nu_state[:, :n] = system.nu[:T, n + ell:]
    Q = np.zeros((2 * n, 2 * n))
    Q[:n, :n] = system.Sigma_xi[n + ell:, n + ell:]
    return nu_state, system.C, Q


def kalman_filter(system: StackedSystem, data: PanelData, T: int | None = None,
                  joseph: bool = True) -> FilterOutput:
    T = data.T if T is None else T
    n = system.n
    k = n + system.ell
    Psi_y, offset, R, y = _measurement(system, data, T)
    nu_state, C, Q = _state_parts(system, T)

    pm = np.zeros((T + 1, 2 * n))
    pP = np.zeros((T + 1, 2 * n, 2 * n))
    fm = np.zeros((T + 1, 2 * n))
    fP = np.zeros((T + 1, 2 * n, 2 * n))
    innov = np.zeros((T, k))
    S_all = np.zeros((T, k, k))
    gains = np.zeros((T, 2 * n, k))
    fm[0] = np.concatenate([system.mu_0, system.mu_0])
    fP[0] = np.kron(np.ones((2, 2)), system.Sigma_0)
    eye = np.eye(2 * n)
    loglik = 0.0
    log2pi = math.log(2.0 * math.pi)
    for t in range(1, T + 1):
        m = nu_state[t - 1] + C @ fm[t - 1]
        P = C @ fP[t - 1] @ C.T + Q
        Z = Psi_y[t - 1]
        e = y[t - 1] - offset[t - 1] - Z @ m
        PZ = P @ Z.T
        S = Z @ PZ + R[t - 1]
        S = 0.5 * (S + S.T)
        try:
            chol = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise InnovationNotPD(t) from None
        sol = np.linalg.solve(S, np.column_stack([PZ.T, e]))
        K = sol[:, :-1].T
        if joseph:
            IKZ = eye - K @ Z
            P_new = IKZ @ P @ IKZ.T + K @ R[t - 1] @ K.T
        else:
            P_new = P - K @ S @ K.T
        pm[t], pP[t] = m, P
        fm[t] = m + K @ e
        fP[t] = 0.5 * (P_new + P_new.T)
        innov[t - 1], S_all[t - 1], gains[t - 1] = e, S, K
        loglik -= 0.5 * (k * log2pi + 2.0 * np.log(chol.diagonal()).sum() + e @ sol[:, -1])
    return FilterOutput(pm, pP, fm, fP, innov, S_all, gains, float(loglik), C, Q, nu_state)


def _smoother_gain(cross: np.ndarray, pred: np.ndarray) -> np.ndarray | None:
    """cross @ pred^{-1} when pred is comfortably positive definite, else None."""
    try:
        d = np.linalg.cholesky(pred).diagonal()
    except np.linalg.LinAlgError:
        return None
    # cheap conditioning proxy from the Cholesky pivots
    if d.min() ** 2 < SMOOTHER_CUTOFF * d.max() ** 2:
        return None
    return np.linalg.solve(pred, cross.T).T


def kalman_smoother(f: FilterOutput) -> SmootherOutput:
    T = f.T
    C = f.transition
    sm = f.filtered_mean.copy()
    sP = f.filtered_cov.copy()
    lag = np.zeros((T, *C.shape))
    gains = np.zeros((T, *C.shape))
    dropped_any = False
    for t in range(T - 1, -1, -1):
        J = _smoother_gain(f.filtered_cov[t] @ C.T, f.predicted_cov[t + 1])
        if J is None:
            inv, dropped = pinv_sym(f.predicted_cov[t + 1], SMOOTHER_CUTOFF)
            dropped_any |= dropped
            J = f.filtered_cov[t] @ C.T @ inv
        sm[t] = f.filtered_mean[t] + J @ (sm[t + 1] - f.predicted_mean[t + 1])
        P = f.filtered_cov[t] - J @ (f.predicted_cov[t + 1] - sP[t + 1]) @ J.T
        sP[t] = 0.5 * (P + P.T)
        lag[t] = J @ sP[t + 1]
        gains[t] = J
    if dropped_any:
        warnings.warn("singular one-step state covariance in smoother; pseudo-inverse used",
                      RuntimeWarning, stacklevel=2)
    return SmootherOutput(sm, sP, lag, gains, f.loglik)


@dataclass(frozen=True)
class Forecast:
    state_mean: np.ndarray  # H x 2n
    state_cov: np.ndarray
    y_mean: np.ndarray      # H x (n+ell)
    y_cov: np.ndarray


def kalman_forecast(f: FilterOutput, system: StackedSystem, data: PanelData,
                    horizon: int) -> Forecast:
    """Multi-step forecasts beyond the last filtered date.

    ``system`` must cover the forecast dates (its T >= filtered T + horizon);
    lagged economic variables use realized values where available and their
    own forecasts otherwise.
    """
    T0 = f.T
    if system.T < T0 + horizon:
        raise ValueError("system coefficients do not cover the forecast horizon")
    n, ell, p = system.n, system.ell, system.p
    k = n + ell
    C, Q = f.transition, f.state_noise
    S_eta = system.Sigma_xi[:k, :k]
    z_hist = [row for row in data.z0_star.reshape(p, ell)[::-1]] + list(data.z[:T0])
    m, P = f.filtered_mean[T0], f.filtered_cov[T0]
    out = [np.zeros((horizon, 2 * n)), np.zeros((horizon, 2 * n, 2 * n)),
           np.zeros((horizon, k)), np.zeros((horizon, k, k))]
    for h in range(horizon):
        t = T0 + 1 + h
        nu_state = np.concatenate([system.nu[t - 1, n + ell:], np.zeros(n)])
        m = nu_state + C @ m
        P = C @ P @ C.T + Q
        z_lag = np.concatenate(z_hist[::-1][:p])
        Psi_y = np.vstack([system.Psi_b[t - 1], np.zeros((ell, 2 * n))])
        A_y = np.vstack([system.E[t - 1], system.A])
        g_y = np.concatenate([system.G[t - 1], np.ones(ell)])
        y = system.nu[t - 1, :k] + Psi_y @ m + A_y @ z_lag
        Sy = Psi_y @ P @ Psi_y.T + g_y[:, None] * S_eta * g_y[None, :]
        z_hist.append(y[n:])
        out[0][h], out[1][h], out[2][h], out[3][h] = m, sym(P), y, sym(Sy)
    return Forecast(*out)
