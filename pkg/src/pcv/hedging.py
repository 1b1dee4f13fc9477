"""Locally risk-minimizing hedges for options and equity-linked insurance.

The hedge ratio at t+1 is h = pinv(Omega) Lambda where Omega is the second
moment of the one-step discounted gain of the traded stocks and Lambda its
covariance with the discounted claim, both given time-t information under
the risk-neutral measure.  Claims on n companies are hedged jointly:
``Lambda`` and ``h`` carry one column per claim component.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import ndtr

from .linalg import pinv_sym
from .model import DividendConvention, ModelError, PanelData
from .pricing import (InsuranceSpec, LifeTable, OptionKind, OptionSpec, PricingState,
                      benefit_weights, bond_price, forward_shift, insurance_premium,
                      lognormal_call_put, option_price, price_selector, pricing_state,
                      terminal_log_price_dist)
from .stacked import StackedSystem, StateBelief

PINV_CUTOFF = 1e-12

Claim = Union[OptionSpec, InsuranceSpec]


class UnsupportedClaim(ModelError):
    pass


# -------------------------------------------------------------------------
# lognormal cross moments
# -------------------------------------------------------------------------

@dataclass(frozen=True)
class PsiArgs:
    """Inputs of the cross moment E[(a1 * e^X1)(a2 * (e^X2 - L)^+)'] for jointly normal X1, X2."""

    L: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    Sigma11: np.ndarray
    Sigma12: np.ndarray
    Sigma22: np.ndarray

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), float)))
        for name in ("Sigma11", "Sigma12", "Sigma22"):
            a = getattr(self, name)
            object.__setattr__(self, name, a.reshape(a.size, 1) if a.ndim == 1 else a)
        if self.Sigma12.shape != (self.mu1.size, self.mu2.size):
            raise ValueError("Sigma12 must be n1 x n2")

    def _parts(self):
        var2 = np.diag(self.Sigma22)
        if np.any(var2 <= 0):
            raise ValueError("diagonal of Sigma22 must be positive")
        sd2 = np.sqrt(var2)
        e1 = self.alpha1 * np.exp(self.mu1 + 0.5 * np.diag(self.Sigma11))
        e2 = self.alpha2 * np.exp(self.mu2 + 0.5 * var2)
        d1 = (self.mu2 + var2 - np.log(self.L)) / sd2
        d2 = d1 - sd2
        shift = self.Sigma12 / sd2[None, :]
        return e1, e2, d1, d2, shift


def psi_plus(args: PsiArgs) -> np.ndarray:
    """E[(alpha1 * e^X1)(alpha2 * (e^X2 - L)^+)'] as an n1 x n2 matrix."""
    e1, e2, d1, d2, shift = args._parts()
    growth = np.outer(e1, e2) * np.exp(args.Sigma12)
    return growth * ndtr(d1[None] + shift) - np.outer(e1, args.alpha2 * args.L) * ndtr(d2[None] + shift)


def psi_minus(args: PsiArgs) -> np.ndarray:
    """E[(alpha1 * e^X1)(alpha2 * (L - e^X2)^+)'] as an n1 x n2 matrix."""
    e1, e2, d1, d2, shift = args._parts()
    growth = np.outer(e1, e2) * np.exp(args.Sigma12)
    return np.outer(e1, args.alpha2 * args.L) * ndtr(-d2[None] - shift) - growth * ndtr(-d1[None] - shift)


# -------------------------------------------------------------------------
# Omega and Lambda
# -------------------------------------------------------------------------

def omega_bar(ps: PricingState) -> np.ndarray:
    """Second moment of the one-step discounted gain of the n stocks."""
    S_uu = ps.system.Sigma_uu
    m, S_m = ps.belief.m_mean, ps.belief.m_cov
    level = np.exp(m + ps.log_book + 0.5 * np.diag(S_m))
    return ps.discount ** 2 * np.expm1(S_uu) * np.outer(level, level) * np.exp(S_m)


@dataclass(frozen=True)
class GainCovariances:
    """Covariances of the state and of the one-step log gain with ln P_k."""

    state: np.ndarray  # Cov(m~_t, ln P_k), n x n
    gain: np.ndarray   # Cov(m~_t + u_{t+1}, ln P_k), n x n


def gain_covariances(ps: PricingState, k: int) -> GainCovariances:
    n = ps.n
    W = price_selector(ps, k)
    mom = ps.moments
    # loading of ln P_k on the state m~*_t and on the first innovation xi_{t+1}
    on_state = np.einsum("ihj,hjs->is", W, mom.state_loading)
    on_first = np.einsum("ihj,hjk->ik", W, mom.noise_loading[:, :, 0, :])
    state = ps.belief.cov[:n] @ on_state.T
    shock = ps.system.Sigma_xi[:n] @ on_first.T
    return GainCovariances(state=state, gain=state + shock)


def _lambda_term(ps: PricingState, k: int, strike: np.ndarray, units: np.ndarray,
                 call_type: bool, guarantee: np.ndarray | None) -> np.ndarray:
    """D_t^2 B_{t,k} times the forward-measure cross moment for a payoff at k."""
    shift = forward_shift(ps, k)
    dist = terminal_log_price_dist(ps, k, shift=shift)
    covs = gain_covariances(ps, k)
    book = np.exp(ps.log_book)
    m, S_m = ps.belief.m_mean, ps.belief.m_cov
    S_uu = ps.system.Sigma_uu
    psi = psi_plus if call_type else psi_minus
    with_gain = psi(PsiArgs(strike, book, units, m + shift.a_hat, dist.mean, S_m + S_uu,
                            covs.gain, dist.cov))
    without = psi(PsiArgs(strike, book, units, m, dist.mean, S_m, covs.state, dist.cov))
    out = with_gain - without
    if guarantee is not None:
        level = book * np.exp(m + 0.5 * np.diag(S_m))
        drift = np.expm1(shift.a_hat + 0.5 * np.diag(S_uu))
        out = out + np.outer(level * drift, guarantee)
    return ps.discount ** 2 * bond_price(ps, k) * out


def lambda_bar(ps: PricingState, claim: Claim, table: LifeTable | None = None) -> np.ndarray:
    """Covariance of the one-step discounted gain with the discounted claim (n x n).

    Column j belongs to the claim written on company j.
    """
    n = ps.n
    if isinstance(claim, OptionSpec):
        strike = np.broadcast_to(claim.strike, (n,))
        return _lambda_term(ps, claim.maturity, strike, np.ones(n),
                            claim.kind is OptionKind.CALL, None)
    if isinstance(claim, InsuranceSpec):
        if table is None:
            raise ValueError("insurance claims need a life table")
        total = np.zeros((n, n))
        for k, weight in benefit_weights(claim, table, ps.t):
            if weight == 0.0:
                continue
            guarantee = claim.guarantee(k) if claim.product.unit_linked else None
            total += weight * _lambda_term(ps, k, claim.strike(k), claim.units(k),
                                           claim.product.unit_linked, guarantee)
        return total
    raise UnsupportedClaim(f"cannot hedge {type(claim).__name__}")


# -------------------------------------------------------------------------
# strategy
# -------------------------------------------------------------------------

def hedge_ratio(Omega: np.ndarray, Lambda: np.ndarray) -> tuple[np.ndarray, bool]:
    """pinv(Omega) Lambda with a relative eigenvalue cutoff; flags a singular Omega."""
    inv, dropped = pinv_sym(Omega, PINV_CUTOFF)
    if dropped:
        warnings.warn("gain second-moment matrix is singular; pseudo-inverse used",
                      RuntimeWarning, stacklevel=2)
    return inv @ Lambda, dropped


def claim_value(ps: PricingState, claim: Claim, table: LifeTable | None = None) -> np.ndarray:
    """Value at t of a claim not yet paid (insurance given survival to t)."""
    if isinstance(claim, OptionSpec):
        return option_price(ps, claim)
    if isinstance(claim, InsuranceSpec):
        if table is None:
            raise ValueError("insurance claims need a life table")
        return insurance_premium(ps, claim, table)
    raise UnsupportedClaim(f"cannot value {type(claim).__name__}")


def payoff_value(claim: Claim, belief: StateBelief, log_book: np.ndarray) -> np.ndarray:
    """Expected payoff at maturity given the belief about the state at maturity.

    Term insurance has paid every benefit by its maturity, so its value is zero.
    """
    mu = belief.m_mean + log_book
    var = np.diag(belief.m_cov)
    if isinstance(claim, OptionSpec):
        call, put = lognormal_call_put(mu, var, np.broadcast_to(claim.strike, mu.shape),
                                       strict=False)
        return np.atleast_1d(call if claim.kind is OptionKind.CALL else put)
    if isinstance(claim, InsuranceSpec):
        if claim.product.is_term:
            return np.zeros(mu.size)
        k = claim.maturity
        F = claim.units(k)
        call, put = lognormal_call_put(mu, var, claim.strike(k), strict=False)
        if claim.product.unit_linked:
            return F * call + claim.guarantee(k)
        return F * put
    raise UnsupportedClaim(f"cannot value {type(claim).__name__}")


def expected_gain(belief: StateBelief, log_book_prev: np.ndarray, log_book: np.ndarray,
                  log_dividend_ratio: np.ndarray, pays: np.ndarray,
                  conv: DividendConvention) -> np.ndarray:
    """E[P_s + d_s] given a belief about m~*_s = (m~_s, m~_{s-1})."""
    n = belief.n
    var = np.diag(belief.cov)
    price = np.exp(belief.mean[:n] + log_book + 0.5 * var[:n])
    if DividendConvention(conv) is DividendConvention.BOOK:
        base = np.exp(log_book_prev)
    else:
        base = np.exp(belief.mean[n:] + log_book_prev + 0.5 * var[n:])
    dividend = np.where(pays, np.exp(np.where(pays, log_dividend_ratio, 0.0)) * base, 0.0)
    return price + dividend


@dataclass(frozen=True)
class HedgeStep:
    t: int                # holdings decided at t, held over (t, t+1]
    h: np.ndarray         # n x n, column j hedges the claim on company j
    h0: np.ndarray        # n, cash position after rebalancing at t+1
    value_next: np.ndarray
    Omega: np.ndarray
    Lambda: np.ndarray
    singular: bool


def strategy_step(ps: PricingState, claim: Claim, value_next: np.ndarray,
                  gain_next: np.ndarray, table: LifeTable | None = None) -> HedgeStep:
    """Holdings h_{t+1} from time-t information and the cash account h0_{t+1}.

    ``value_next`` is V_{t+1} and ``gain_next`` is P_{t+1} + d_{t+1}.
    """
    Omega = omega_bar(ps)
    Lambda = lambda_bar(ps, claim, table)
    h, singular = hedge_ratio(Omega, Lambda)
    h0 = np.asarray(value_next, float) - h.T @ np.asarray(gain_next, float)
    return HedgeStep(ps.t, h, h0, np.asarray(value_next, float), Omega, Lambda, singular)


@dataclass(frozen=True)
class HedgeStrategy:
    """Holdings over dates 1..maturity; row s-1 of ``h`` is held over (s-1, s]."""

    h: np.ndarray   # maturity x n x n
    h0: np.ndarray  # maturity x n
    V: np.ndarray   # (maturity + 1) x n, value process from time 0
    singular: np.ndarray  # maturity, bool

    @property
    def maturity(self) -> int:
        return self.h.shape[0]


def known_state_beliefs(m: np.ndarray) -> list[StateBelief]:
    """Point-mass beliefs from an observed log price-to-book path m~_0..m~_T."""
    m = np.asarray(m, dtype=float)
    k = 2 * m.shape[1]
    lagged = np.vstack([m[:1], m[:-1]])
    return [StateBelief(s, np.concatenate([m[s], lagged[s]]), np.zeros((k, k)), "known")
            for s in range(m.shape[0])]


def hedge_path(system: StackedSystem, data: PanelData, conv: DividendConvention, claim: Claim,
               beliefs: list[StateBelief], table: LifeTable | None = None) -> HedgeStrategy:
    """Holdings, cash and value along the sample path up to the claim's maturity.

    ``beliefs[s]`` is the time-s information about the state: risk-neutral
    filtered beliefs for a private company or point masses for a public one.
    Prices at s+1 that enter the cash account are their conditional means.
    """
    T = claim.maturity
    if len(beliefs) < T + 1 or T > data.T:
        raise ValueError("need beliefs and data for every date up to maturity")
    n = data.n
    log_book = data.log_book
    V = np.zeros((T + 1, n))
    states = []
    for s in range(T):
        ps = pricing_state(system, data, s, belief=beliefs[s], t_end=T)
        states.append(ps)
        V[s] = claim_value(ps, claim, table)
    V[T] = payoff_value(claim, beliefs[T], log_book[T])
    h = np.zeros((T, n, n))
    h0 = np.zeros((T, n))
    singular = np.zeros(T, dtype=bool)
    for t, ps in enumerate(states):
        gain = expected_gain(beliefs[t + 1], log_book[t], log_book[t + 1], data.delta_tilde[t],
                             data.pays_dividend[t], conv)
        step = strategy_step(ps, claim, V[t + 1], gain, table)
        h[t], h0[t], singular[t] = step.h, step.h0, step.singular
    return HedgeStrategy(h, h0, V, singular)
