"""Random parameters and simulated panels for tests and experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DividendConvention, ModelParameters, PanelData
from .montecarlo import SimConfig, simulate
from .stacked import real_measure_system


def random_spd(rng: np.random.Generator, k: int, scale: float = 1.0,
               min_eig: float = 0.2) -> np.ndarray:
    """Random symmetric positive definite matrix with eigenvalues in [min_eig, 1] * scale."""
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    return scale * (q * rng.uniform(min_eig, 1.0, k)) @ q.T


def random_parameters(rng: np.random.Generator, n: int, ell: int, p: int, l: int,
                      noise_scale: float = 0.01) -> ModelParameters:
    """A stable VAR with moderate loadings and noise variances around ``noise_scale``."""
    A = rng.uniform(-0.5, 0.5, (ell, ell * p)) / p
    return ModelParameters(
        C_k=rng.uniform(0.0, 0.05, (n, l)),
        C_z=rng.uniform(-0.01, 0.01, (ell, l)),
        A=A,
        C_m=rng.uniform(-0.01, 0.01, (n, l)),
        Sigma_eta=random_spd(rng, n + ell, noise_scale),
        Sigma_ww=random_spd(rng, n, noise_scale),
        mu_0=rng.uniform(-0.3, 0.3, n),
        Sigma_0=random_spd(rng, n, noise_scale),
    )


@dataclass(frozen=True)
class SyntheticPanel:
    data: PanelData
    m: np.ndarray  # (T+1) x n, simulated log price-to-book ratios


def dividend_ratios_for(params: ModelParameters, psi: np.ndarray, phi: np.ndarray,
                        conv: DividendConvention) -> np.ndarray:
    """Log dividend ratios that put the linearization at the requested ``phi`` values."""
    delta = phi + psi @ params.C_k.T
    if DividendConvention(conv) is DividendConvention.BOOK:
        psi_before = np.vstack([np.zeros((1, psi.shape[1])), np.cumsum(psi, axis=0)[:-1]])
        delta = delta + params.mu_0 + psi_before @ params.C_m.T
    return delta


def synthetic_panel(params: ModelParameters, T: int, seed: int,
                    conv: DividendConvention = DividendConvention.BOOK,
                    pay_prob: float = 0.8, phi_range: tuple[float, float] = (-4.0, -2.0),
                    psi: np.ndarray | None = None, z0_star: np.ndarray | None = None,
                    B0: np.ndarray | None = None) -> SyntheticPanel:
    """Simulate one panel under the real measure.

    Dividend ratios are chosen so that every payer's linearization point lies
    in ``phi_range``.  The default regressor is a constant.
    """
    rng = np.random.default_rng(seed)
    n, ell, p, l = params.n, params.ell, params.p, params.l
    psi = np.ones((T, l)) if psi is None else np.asarray(psi, float)
    pays = rng.random((T, n)) < pay_prob
    phi = rng.uniform(*phi_range, (T, n))
    delta = np.where(pays, dividend_ratios_for(params, psi, phi, conv), 0.0)
    template = PanelData(
        B0=np.ones(n) if B0 is None else B0,
        b_tilde=np.zeros((T, n)), z=np.zeros((T, ell)),
        z0_star=np.zeros(ell * p) if z0_star is None else z0_star,
        delta_tilde=delta, pays_dividend=pays, psi=psi,
    )
    system = real_measure_system(params, template, conv)
    paths = simulate(system, template, SimConfig(n_paths=1, seed=seed))
    data = PanelData(B0=template.B0, b_tilde=paths.b_tilde[0, 1:], z=paths.z[0, 1:],
                     z0_star=template.z0_star, delta_tilde=delta, pays_dividend=pays, psi=psi)
    return SyntheticPanel(data=data, m=paths.m[0])
