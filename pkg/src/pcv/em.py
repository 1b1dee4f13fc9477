"""Maximum likelihood estimation by expectation-maximization.

One iteration runs the filter and smoother at the current parameters, then
updates the blocks in sequence (an ECM scheme):

1. ``(mu_0, C_k, C_m)`` by the first-order conditions of the expected complete
   log-likelihood with the dividend terms frozen at the current iterate;
2. ``[C_z : A]`` given the refreshed book-growth noise;
3. the covariances given all updated means.

Step 1 is accepted only if it raises the expected complete log-likelihood and
keeps every linearization point valid; otherwise it is halved towards the
current iterate.  Steps 2 and 3 are exact conditional maximizers, so the
observed-data log-likelihood cannot decrease.

Plain EM crawls along weakly identified directions of this model.  Two
optional finishers keep the trace monotone: squared extrapolation between
sweeps, and a quasi-Newton polish whose gradient comes from the expected
complete log-likelihood at its own E-step (Fisher's identity).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .kalman import SmootherOutput, kalman_filter, kalman_smoother
from .linalg import floor_eigenvalues, sym
from .model import (DividendConvention, Linearization, ModelParameters, PanelData,
                    PhiOutOfDomain, linearize_arrays, real_system_arrays)
from .stacked import real_measure_system

log = logging.getLogger(__name__)

MEAN_BLOCKS = ("mu_0", "C_k", "C_m")


@dataclass(frozen=True)
class NoiseMoments:
    """Smoothed first and second moments of the model noise at some parameter value."""

    u: np.ndarray        # T x n, E[u_t | F_T]
    R: np.ndarray        # T x n x 2n, loading of u_t on the state error
    v: np.ndarray        # T x ell, observed
    w: np.ndarray        # T x n, E[w_t | F_T]
    Euu: np.ndarray      # T x n x n
    Eww: np.ndarray      # T x n x n
    E0: np.ndarray       # n x n, E[(m_0 - mu_0)(m_0 - mu_0)' | F_T]
    log_det_G: float     # sum_t ln |G_t|


@dataclass(frozen=True)
class EStep:
    params: ModelParameters
    conv: DividendConvention
    lin: Linearization
    smoothed: SmootherOutput
    loglik: float
    noise: NoiseMoments
    delta: np.ndarray    # T x n, E[delta_t | F_T]
    Z: np.ndarray        # T x n x n, E[delta_t u_t'] - delta_{t|T} u_{t|T}'
    escript: np.ndarray  # T x n, diag of E[delta_t u_t'] Omega_uu
    alpha: np.ndarray    # T x n
    u_k: np.ndarray      # T x n, u_{t|T} + C_k psi_t
    Omega: np.ndarray    # inverse of Sigma_eta


@dataclass
class EMOptions:
    tol: float = 1e-7
    max_iter: int = 500
    eig_floor: float = 1e-12
    max_halvings: int = 40
    decrease_slack: float = 1e-6
    accelerate: bool = False
    fixed: frozenset[str] = frozenset()  # parameter blocks held at their starting values
    polish: bool = False  # finish with quasi-Newton steps on the observed log-likelihood
    polish_gtol: float = 1e-7
    polish_max_iter: int = 200
    newton_steps: int = 5


@dataclass
class EMTrace:
    params: list[ModelParameters] = field(default_factory=list)
    loglik: list[float] = field(default_factory=list)
    param_change: list[float] = field(default_factory=list)
    halvings: list[int] = field(default_factory=list)
    converged: bool = False
    aborted: bool = False
    message: str = ""

    @property
    def iterations(self) -> int:
        return len(self.loglik)

    def is_monotone(self, rel_slack: float = 1e-8) -> bool:
        ll = np.asarray(self.loglik)
        if ll.size < 2:
            return True
        return bool(np.all(np.diff(ll) >= -rel_slack * np.abs(ll[1:])))

    def rows(self):
        for k, (ll, dp, hv) in enumerate(zip(self.loglik, self.param_change, self.halvings)):
            yield k, ll, dp, hv


# -------------------------------------------------------------------------
# smoothed noise and the expected complete log-likelihood
# -------------------------------------------------------------------------

def _var_residuals(params: ModelParameters, data: PanelData) -> np.ndarray:
    return data.z - data.psi @ params.C_z.T - data.z_lags[:-1] @ params.A.T


def noise_moments(params: ModelParameters, data: PanelData, conv: DividendConvention,
                  smoothed: SmootherOutput, lin: Linearization | None = None) -> NoiseMoments:
    """Moments of (u, v, w) under the smoothed state law, with coefficients taken from ``params``.

    The state law need not come from ``params``; this is what lets the
    expected complete log-likelihood be evaluated away from the E-step point.
    """
    conv = DividendConvention(conv)
    lin = lin if lin is not None else linearize_arrays(
        params, data.delta_tilde, data.pays_dividend, data.psi, conv)
    coef = real_system_arrays(params, lin, data.delta_tilde, data.psi, conv)
    n = params.n
    g = lin.g
    mean, cov = smoothed.mean[1:], smoothed.cov[1:]
    R = -coef.Psi_b / g[:, :, None]
    u = (data.b_tilde - coef.nu_b) / g + np.einsum("tij,tj->ti", R, mean)
    Euu = np.einsum("ti,tj->tij", u, u) + R @ cov @ np.swapaxes(R, 1, 2)
    w = mean[:, :n] - mean[:, n:] - data.psi @ params.C_m.T
    Rw = np.hstack([np.eye(n), -np.eye(n)])
    Eww = np.einsum("ti,tj->tij", w, w) + Rw @ cov @ Rw.T
    d0 = smoothed.mean[0, :n] - params.mu_0
    E0 = smoothed.cov[0, :n, :n] + np.outer(d0, d0)
    return NoiseMoments(u=u, R=R, v=_var_residuals(params, data), w=w, Euu=Euu, Eww=Eww,
                        E0=E0, log_det_G=float(np.log(g).sum()))


def _gauss_term(cov: np.ndarray, second_moment_sum: np.ndarray, count: int) -> float:
    """-count/2 ln|cov| - 1/2 tr(cov^{-1} S), or -inf if cov is not positive definite."""
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        return -math.inf
    return -0.5 * count * logdet - 0.5 * float(np.trace(np.linalg.solve(cov, second_moment_sum)))


def expected_complete_loglik(params: ModelParameters, data: PanelData,
                             conv: DividendConvention, smoothed: SmootherOutput) -> float:
    """E[ln f(y, m) | F_T] at ``params`` with the state law fixed by ``smoothed``."""
    try:
        nm = noise_moments(params, data, conv, smoothed)
    except PhiOutOfDomain:
        return -math.inf
    T, n, ell = data.T, data.n, data.ell
    S_uu = nm.Euu.sum(axis=0)
    S_uv = nm.u.T @ nm.v
    S_vv = nm.v.T @ nm.v
    S_eta = np.block([[S_uu, S_uv], [S_uv.T, S_vv]])
    q = -0.5 * ((2 * n + ell) * T + n) * math.log(2.0 * math.pi)
    q += _gauss_term(params.Sigma_eta, S_eta, T)
    q += _gauss_term(params.Sigma_ww, nm.Eww.sum(axis=0), T)
    q += _gauss_term(params.Sigma_0, nm.E0, 1)
    return q - nm.log_det_G


# -------------------------------------------------------------------------
# E step
# -------------------------------------------------------------------------

def e_step(params: ModelParameters, data: PanelData,
           conv: DividendConvention = DividendConvention.BOOK) -> EStep:
    conv = DividendConvention(conv)
    lin = linearize_arrays(params, data.delta_tilde, data.pays_dividend, data.psi, conv)
    system = real_measure_system(params, data, conv, lin)
    f = kalman_filter(system, data)
    s = kalman_smoother(f)
    nm = noise_moments(params, data, conv, s, lin)
    n = params.n
    g = lin.g
    Omega = np.linalg.inv(params.Sigma_eta)
    Omega_uu, Omega_uv = Omega[:n, :n], Omega[:n, n:]

    mean, cov = s.mean[1:], s.cov[1:]
    lag_selector = np.zeros((n, 2 * n))
    if conv is DividendConvention.BOOK:
        prior_mean = params.mu_0 + data.psi_before @ params.C_m.T
        delta = (g - 1.0) * (nm.u + mean[:, n:] - prior_mean)
        lag_selector[:, n:] = np.eye(n)
    else:
        delta = (g - 1.0) * nm.u
    Z = (g - 1.0)[:, :, None] * ((nm.R + lag_selector) @ cov @ np.swapaxes(nm.R, 1, 2))
    E_du = Z + np.einsum("ti,tj->tij", delta, nm.u)
    escript = np.einsum("tij,ji->ti", E_du, Omega_uu)
    alpha = g - 1.0 - escript - delta * (nm.v @ Omega_uv.T)
    u_k = nm.u + data.psi @ params.C_k.T
    return EStep(params=params, conv=conv, lin=lin, smoothed=s, loglik=f.loglik, noise=nm,
                 delta=delta, Z=Z, escript=escript, alpha=alpha, u_k=u_k, Omega=Omega)


# -------------------------------------------------------------------------
# M steps
# -------------------------------------------------------------------------

def _gram_solve(rhs: np.ndarray, regressors: np.ndarray) -> np.ndarray:
    """rhs @ (X'X)^{-1} for regressors X stacked by rows."""
    gram = regressors.T @ regressors
    return np.linalg.solve(gram, rhs.T).T


def m_step_book(q: EStep, data: PanelData) -> dict[str, np.ndarray]:
    """Updates of (mu_0, C_k, C_m) when dividends are proportional to book value."""
    p = q.params
    n = p.n
    Omega_uu, Omega_uv = q.Omega[:n, :n], q.Omega[:n, n:]
    psi = data.psi
    mean = q.smoothed.mean
    mu_0 = mean[0, :n] + p.Sigma_0 @ q.alpha.sum(axis=0)
    score_k = (q.alpha + q.u_k @ Omega_uu.T + q.noise.v @ Omega_uv.T).T @ psi
    C_k = np.linalg.solve(Omega_uu, _gram_solve(score_k, psi))
    dm = mean[1:, :n] - mean[1:, n:]
    C_m = _gram_solve(p.Sigma_ww @ q.alpha.T @ data.psi_before + dm.T @ psi, psi)
    return {"mu_0": mu_0, "C_k": C_k, "C_m": C_m}


def m_step_price(q: EStep, data: PanelData) -> dict[str, np.ndarray]:
    """Updates of (mu_0, C_k, C_m) when dividends are proportional to the market price."""
    p = q.params
    n = p.n
    Omega_uu, Omega_uv = q.Omega[:n, :n], q.Omega[:n, n:]
    psi = data.psi
    mean = q.smoothed.mean
    score_k = (q.alpha + q.u_k @ Omega_uu.T + q.noise.v @ Omega_uv.T).T @ psi
    C_k = np.linalg.solve(Omega_uu, _gram_solve(score_k, psi))
    dm = mean[1:, :n] - mean[1:, n:]
    return {"mu_0": mean[0, :n].copy(), "C_k": C_k, "C_m": _gram_solve(dm.T @ psi, psi)}


def m_step_var(params: ModelParameters, u_smoothed: np.ndarray, data: PanelData,
               Omega: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """[C_z : A] given the smoothed book-growth noise and the current precision blocks."""
    n = params.n
    Omega = np.linalg.inv(params.Sigma_eta) if Omega is None else Omega
    Omega_vu, Omega_vv = Omega[n:, :n], Omega[n:, n:]
    X = np.hstack([data.psi, data.z_lags[:-1]])
    rhs = np.linalg.solve(Omega_vv, Omega_vu @ u_smoothed.T @ X) + data.z.T @ X
    A_bar = _gram_solve(rhs, X)
    l = data.l
    return {"C_z": A_bar[:, :l], "A": A_bar[:, l:]}


def m_step_cov(params: ModelParameters, data: PanelData, conv: DividendConvention,
               smoothed: SmootherOutput, eig_floor: float = 1e-12) -> dict[str, np.ndarray]:
    """Covariance updates given the mean parameters in ``params``."""
    nm = noise_moments(params, data, conv, smoothed)
    T = data.T
    S_uu = nm.Euu.sum(axis=0)
    S_uv = nm.u.T @ nm.v
    S_vv = nm.v.T @ nm.v
    Sigma_eta = np.block([[S_uu, S_uv], [S_uv.T, S_vv]]) / T
    return {
        "Sigma_eta": floor_eigenvalues(Sigma_eta, eig_floor),
        "Sigma_ww": floor_eigenvalues(nm.Eww.sum(axis=0) / T, eig_floor),
        "Sigma_0": floor_eigenvalues(nm.E0, eig_floor),
    }


def _valid(params: ModelParameters, data: PanelData, conv: DividendConvention) -> bool:
    try:
        lin = linearize_arrays(params, data.delta_tilde, data.pays_dividend, data.psi, conv)
    except PhiOutOfDomain:
        return False
    if not (np.all(np.isfinite(lin.g)) and np.all(np.isfinite(lin.h))):
        return False
    for name in ("Sigma_eta", "Sigma_ww", "Sigma_0"):
        if np.linalg.eigvalsh(getattr(params, name)).min() <= 0.0:
            return False
    return True


def em_iteration(q: EStep, data: PanelData, options: EMOptions | None = None
                 ) -> tuple[ModelParameters, int]:
    """One ECM sweep from the E-step ``q``; returns the new parameters and the halvings used."""
    options = options or EMOptions()
    p, conv, s = q.params, q.conv, q.smoothed
    keep = {k: getattr(p, k) for k in options.fixed}
    target = m_step_book(q, data) if conv is DividendConvention.BOOK else m_step_price(q, data)
    target.update({k: v for k, v in keep.items() if k in target})
    q_old = expected_complete_loglik(p, data, conv, s)
    step, halvings = 1.0, 0
    while True:
        trial = p.replace(**{k: getattr(p, k) + step * (target[k] - getattr(p, k))
                             for k in MEAN_BLOCKS})
        if _valid(trial, data, conv) and \
                expected_complete_loglik(trial, data, conv, s) >= q_old:
            break
        halvings += 1
        step *= 0.5
        if halvings > options.max_halvings:
            trial = p
            break
    if halvings:
        log.debug("mean-parameter step halved %d times", halvings)
    u_new = noise_moments(trial, data, conv, s).u
    trial = trial.replace(**m_step_var(trial, u_new, data, q.Omega))
    trial = trial.replace(**m_step_cov(trial, data, conv, s, options.eig_floor))
    return trial.replace(**keep), halvings


def _relative_change(new: ModelParameters, old: ModelParameters) -> float:
    a, b = new.as_vector(), old.as_vector()
    return float(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(b))))


def _extrapolate(p0: ModelParameters, p1: ModelParameters, p2: ModelParameters,
                 data: PanelData, conv: DividendConvention) -> ModelParameters | None:
    """Squared-extrapolation point built from two EM steps, or None if it leaves the domain."""
    x0, x1, x2 = p0.as_vector(), p1.as_vector(), p2.as_vector()
    r = x1 - x0
    v = x2 - x1 - r
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return None
    a = min(-1.0, -np.linalg.norm(r) / nv)
    while a < -1.0:
        cand = _from_vector(p0, x0 - 2.0 * a * r + a * a * v)
        if _valid(cand, data, conv):
            return cand
        a = 0.5 * (a - 1.0)
        if a > -1.0 - 1e-3:
            break
    return None


def _from_vector(template: ModelParameters, x: np.ndarray) -> ModelParameters:
    out, i = {}, 0
    for name, block in template.blocks().items():
        k = block.size
        val = x[i:i + k].reshape(block.shape)
        out[name] = sym(val) if name.startswith("Sigma") else val
        i += k
    return template.replace(**out)


def em_run(params0: ModelParameters, data: PanelData,
           conv: DividendConvention = DividendConvention.BOOK,
           options: EMOptions | None = None, sink=None) -> tuple[ModelParameters, EMTrace]:
    """Iterate E and M steps until parameters and log-likelihood settle.

    With ``options.accelerate`` every two EM sweeps are followed by a squared
    extrapolation, kept only if it does not lower the log-likelihood.  Every
    recorded iterate therefore has a log-likelihood at least as high as the
    one before it.  ``sink`` (optional callable) receives
    ``(iteration, loglik, param_change)`` per recorded iterate.  The returned
    parameters are the last recorded ones.
    """
    options = options or EMOptions()
    conv = DividendConvention(conv)
    trace = EMTrace()
    q = e_step(params0, data, conv)
    trace.params.append(params0)
    trace.loglik.append(q.loglik)
    trace.param_change.append(math.nan)
    trace.halvings.append(0)

    def record(q_new: EStep, halvings: int) -> bool:
        """Append an iterate; True when the run should stop."""
        prev_p, prev_ll = trace.params[-1], trace.loglik[-1]
        change = _relative_change(q_new.params, prev_p)
        d_ll = q_new.loglik - prev_ll
        trace.params.append(q_new.params)
        trace.loglik.append(q_new.loglik)
        trace.param_change.append(change)
        trace.halvings.append(halvings)
        it = trace.iterations - 1
        if sink is not None:
            sink(it, q_new.loglik, change)
        if d_ll < -options.decrease_slack:
            trace.aborted = True
            trace.message = f"log-likelihood decreased by {-d_ll:.3g} at iteration {it}"
            log.warning(trace.message)
            return True
        if max(change, abs(d_ll)) < options.tol:
            trace.converged = True
            trace.message = f"converged after {it} iterations"
            return True
        if it >= options.max_iter:
            trace.message = f"stopped at max_iter={options.max_iter}"
            return True
        return False

    while True:
        p0 = q.params
        p1, h1 = em_iteration(q, data, options)
        q1 = e_step(p1, data, conv)
        if record(q1, h1):
            break
        if not options.accelerate:
            q = q1
            continue
        p2, h2 = em_iteration(q1, data, options)
        q2 = e_step(p2, data, conv)
        if record(q2, h2):
            break
        cand = _extrapolate(p0, p1, p2, data, conv)
        q = q2
        if cand is not None:
            cand = cand.replace(**{k: getattr(p2, k) for k in options.fixed})
            try:
                q3 = e_step(cand, data, conv)
            except np.linalg.LinAlgError:
                continue
            if q3.loglik >= q2.loglik:
                q = q3
                if record(q3, 0):
                    break
    if trace.aborted:
        return trace.params[-2], trace
    if options.polish:
        polished = polish(trace.params[-1], data, conv, options)
        if polished is not trace.params[-1]:
            q_pol = e_step(polished, data, conv)
            if q_pol.loglik >= trace.loglik[-1]:
                trace.params.append(polished)
                trace.loglik.append(q_pol.loglik)
                trace.param_change.append(_relative_change(polished, trace.params[-2]))
                trace.halvings.append(0)
                trace.converged = True
                trace.message += "; polished"
    return trace.params[-1], trace


# -------------------------------------------------------------------------
# quasi-Newton polish
# -------------------------------------------------------------------------

def _free_blocks(params: ModelParameters, fixed) -> list[str]:
    return [k for k in params.blocks() if k not in fixed]


def _coordinate_scales(data: PanelData, conv: DividendConvention) -> dict[str, float]:
    """Typical magnitude of the regressor each mean block multiplies."""
    rms = lambda a: float(np.sqrt(np.mean(np.square(a)))) or 1.0  # noqa: E731
    s_psi = rms(data.psi)
    s_m = max(s_psi, rms(data.psi_before)) if DividendConvention(conv) is DividendConvention.BOOK \
        else s_psi
    return {"C_k": s_psi, "C_z": s_psi, "C_m": s_m}


def _pack(params: ModelParameters, names: list[str],
          scales: dict[str, float] | None = None) -> np.ndarray:
    """Unconstrained coordinates: covariances enter through a log-diagonal Cholesky factor."""
    scales = scales or {}
    parts = []
    for k in names:
        a = getattr(params, k)
        if k.startswith("Sigma"):
            L = np.linalg.cholesky(a)
            i, j = np.tril_indices(a.shape[0])
            L[np.diag_indices_from(L)] = np.log(L.diagonal())
            parts.append(L[i, j])
        else:
            parts.append(np.ravel(a) * scales.get(k, 1.0))
    return np.concatenate(parts)


def _unpack(template: ModelParameters, names: list[str], x: np.ndarray,
            scales: dict[str, float] | None = None) -> ModelParameters:
    scales = scales or {}
    out, pos = {}, 0
    for k in names:
        a = getattr(template, k)
        if k.startswith("Sigma"):
            d = a.shape[0]
            i, j = np.tril_indices(d)
            L = np.zeros((d, d))
            L[i, j] = x[pos:pos + i.size]
            L[np.diag_indices(d)] = np.exp(L.diagonal())
            out[k] = L @ L.T
            pos += i.size
        else:
            out[k] = x[pos:pos + a.size].reshape(a.shape) / scales.get(k, 1.0)
            pos += a.size
    return template.replace(**out)


def _derivative(f, x, i, h: float) -> float:
    """Fourth-order central difference of ``f`` along coordinate ``i`` (scalar ``x`` if None)."""
    def at(k):
        if i is None:
            return f(x + k * h)
        y = x.copy()
        y[i] += k * h
        return f(y)
    return (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)


def score(params: ModelParameters, data: PanelData, conv: DividendConvention,
          names: list[str] | None = None, scales: dict[str, float] | None = None
          ) -> tuple[float, np.ndarray]:
    """Log-likelihood and its gradient in packed coordinates.

    The gradient of the observed log-likelihood equals the gradient of the
    expected complete log-likelihood with the state law held at the same
    point, which only needs cheap central differences of the latter.
    """
    names = names or list(params.blocks())
    q = e_step(params, data, conv)
    x = _pack(params, names, scales)
    f = lambda y: expected_complete_loglik(_unpack(params, names, y, scales),  # noqa: E731
                                           data, conv, q.smoothed)
    grad = np.array([_derivative(f, x, i, 1e-4 * max(1.0, abs(x[i]))) for i in range(x.size)])
    return q.loglik, grad


def _inverse_curvature(params: ModelParameters, data: PanelData, conv: DividendConvention,
                       names: list[str], scales: dict[str, float]) -> np.ndarray:
    """Inverse of the negated log-likelihood Hessian (differenced scores), floored to be PD."""
    x = _pack(params, names, scales)
    fallback = np.eye(x.size) * 1e-3
    H = np.empty((x.size, x.size))
    for i in range(x.size):
        h = 1e-4 * max(1.0, abs(x[i]))
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        try:
            g_up = score(_unpack(params, names, up, scales), data, conv, names, scales)[1]
            g_dn = score(_unpack(params, names, dn, scales), data, conv, names, scales)[1]
        except (np.linalg.LinAlgError, PhiOutOfDomain):
            return fallback
        H[:, i] = -(g_up - g_dn) / (2.0 * h)
    if not np.all(np.isfinite(H)):
        return fallback
    w, V = np.linalg.eigh(sym(H))
    w = np.maximum(np.abs(w), 1e-8 * max(1.0, np.abs(w).max()))
    return sym((V / w) @ V.T)


def polish(params: ModelParameters, data: PanelData, conv: DividendConvention,
           options: EMOptions) -> ModelParameters:
    """BFGS on the observed log-likelihood from an EM iterate; never returns a worse point."""
    names = _free_blocks(params, options.fixed)
    scales = _coordinate_scales(data, conv)
    x0 = _pack(params, names, scales)
    best = {"ll": -math.inf, "params": params}

    def objective(x):
        trial = _unpack(params, names, x, scales)
        if not _valid(trial, data, conv):
            return math.inf, np.zeros_like(x)
        try:
            ll, g = score(trial, data, conv, names, scales)
        except np.linalg.LinAlgError:
            return math.inf, np.zeros_like(x)
        if ll > best["ll"]:
            best.update(ll=ll, params=trial)
        return -ll, -g

    curvature = _inverse_curvature(params, data, conv, names, scales)
    res = optimize.minimize(objective, x0, jac=True, method="BFGS",
                            options={"gtol": options.polish_gtol,
                                     "maxiter": options.polish_max_iter,
                                     "hess_inv0": curvature})
    log.debug("polish: %s after %d iterations", res.message, res.nit)
    # Close to the optimum likelihood differences drown in rounding, so these
    # fixed-curvature Newton steps are judged by the score instead.
    current = best["params"]
    ll, g = score(current, data, conv, names, scales)
    if options.newton_steps and np.abs(g).max() > options.polish_gtol:
        curvature = _inverse_curvature(current, data, conv, names, scales)
    for _ in range(options.newton_steps):
        if np.abs(g).max() <= options.polish_gtol:
            break
        x = _pack(current, names, scales)
        step = curvature @ g
        trial = _unpack(current, names, x + step, scales)
        if not _valid(trial, data, conv):
            break
        try:
            ll_new, g_new = score(trial, data, conv, names, scales)
        except np.linalg.LinAlgError:
            break
        if ll_new < ll - 1e-10 * abs(ll) or np.abs(g_new).max() >= np.abs(g).max():
            break
        current, ll, g = trial, ll_new, g_new
    best["params"] = current
    return best["params"]


def q_gradient(params: ModelParameters, data: PanelData, conv: DividendConvention,
               fixed=frozenset(), rel_step: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradient of the expected complete log-likelihood at its own E-step.

    Symmetric matrices are perturbed in both mirrored entries at once, so an
    off-diagonal component is the derivative along the symmetric direction.
    Steps shrink with the magnitude of the regressor a coefficient multiplies
    and with the size of covariance entries; otherwise truncation error
    swamps the result.
    """
    conv = DividendConvention(conv)
    q = e_step(params, data, conv)
    scales = _coordinate_scales(data, conv)
    out = {}
    for name, a in params.blocks().items():
        if name in fixed:
            continue
        scale = scales.get(name, 1.0)
        g = np.zeros(a.shape)
        for idx in np.ndindex(a.shape):
            if name.startswith("Sigma") and idx[0] > idx[1]:
                continue
            if name.startswith("Sigma"):
                h = rel_step * math.sqrt(a[idx[0], idx[0]] * a[idx[1], idx[1]])
            else:
                h = rel_step * max(1.0, abs(a[idx]) * scale) / scale
            def f(step, idx=idx, a=a, name=name):
                b = a.copy()
                b[idx] += step
                if name.startswith("Sigma"):
                    b[idx[::-1]] = b[idx]
                return expected_complete_loglik(params.replace(**{name: b}), data, conv,
                                                q.smoothed)
            g[idx] = _derivative(f, 0.0, None, h)
            if name.startswith("Sigma"):
                g[idx[::-1]] = g[idx]
        out[name] = g
    return out


# -------------------------------------------------------------------------
# starting values and outputs
# -------------------------------------------------------------------------

def initial_parameters(data: PanelData, conv: DividendConvention = DividendConvention.BOOK,
                       mu_0: np.ndarray | None = None, eig_floor: float = 1e-6) -> ModelParameters:
    """Deterministic starting point: VAR by least squares, zero drifts, residual covariances.

    ``mu_0`` is a proxy for the initial log price-to-book ratio (default 0).
    The noise variance of book growth is split evenly between the
    required-return and price-to-book shocks.
    """
    n, l = data.n, data.l
    X = np.hstack([data.psi, data.z_lags[:-1]])
    A_bar = np.linalg.lstsq(X, data.z, rcond=None)[0].T
    v = data.z - X @ A_bar.T
    b = data.b_tilde - data.b_tilde.mean(axis=0)
    resid = np.hstack([b, v])
    S = np.atleast_2d(np.cov(resid, rowvar=False, bias=True))
    S_bb = S[:n, :n]
    Sigma_eta = S.copy()
    Sigma_eta[:n, :] *= 0.5
    Sigma_eta[n:, :n] *= 0.5
    params = ModelParameters(
        C_k=np.zeros((n, l)), C_z=A_bar[:, :l], A=A_bar[:, l:], C_m=np.zeros((n, l)),
        Sigma_eta=floor_eigenvalues(Sigma_eta, eig_floor),
        Sigma_ww=floor_eigenvalues(0.5 * S_bb, eig_floor),
        mu_0=np.zeros(n) if mu_0 is None else np.asarray(mu_0, float),
        Sigma_0=floor_eigenvalues(S_bb, eig_floor),
    )
    linearize_arrays(params, data.delta_tilde, data.pays_dividend, data.psi, conv)
    return params


def smoothed_value(smoothed: SmootherOutput, data: PanelData) -> np.ndarray:
    """Market value estimates V_{t|T} = exp(m_{t|T}) * B_t for t = 0..T."""
    n = data.n
    return np.exp(smoothed.mean[:, :n] + data.log_book)
