"""Bond, option and equity-linked insurance prices under the risk-neutral measure.

Everything here starts from a :class:`PricingState`: the risk-neutral system,
the data, the pricing date and a belief about the price-to-book state at that
date.  A filtered belief gives prices for a private company; a belief with
zero covariance gives the public-company prices where the state is observed.

Prices for a claim paid at ``u`` are computed under the (t, u)-forward
measure, which shifts the conditional means of the path by covariances with
the spot rate and leaves covariances unchanged.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.special import ndtr

from .kalman import kalman_filter
from .linalg import sym
from .model import DividendConvention, ModelError, ModelParameters, PanelData
from .stacked import (CondMoments, Measure, StackedSystem, StateBelief, cond_moments_given_F,
                      risk_neutral_system)

DEGENERATE_VARIANCE = 1e-14


class DegenerateVariance(ModelError):
    pass


class IncompleteLifeTable(ModelError):
    pass


# -------------------------------------------------------------------------
# lognormal building block
# -------------------------------------------------------------------------

def lognormal_call_put(mu, var, strike, strict: bool = True):
    """Undiscounted E[(e^X - K)^+] and E[(K - e^X)^+] for X ~ N(mu, var).

    Inputs broadcast.  With ``strict`` a nonpositive variance raises
    :class:`DegenerateVariance`; otherwise variances below 1e-14 fall back to
    the intrinsic value of the forward with a warning.
    """
    mu, var, strike = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mu, var, strike)))
    if np.any(strike <= 0):
        raise ValueError("strike must be positive")
    if strict and np.any(var <= 0):
        raise DegenerateVariance("variance of the log price must be positive")
    forward = np.exp(mu + 0.5 * var)
    tiny = var < DEGENERATE_VARIANCE
    if np.any(tiny):
        warnings.warn("log-price variance below 1e-14; using intrinsic value", RuntimeWarning,
                      stacklevel=2)
    sd = np.sqrt(np.where(tiny, 1.0, var))
    d1 = (mu + var - np.log(strike)) / sd
    d2 = d1 - sd
    call = forward * ndtr(d1) - strike * ndtr(d2)
    put = strike * ndtr(-d2) - forward * ndtr(-d1)
    call = np.where(tiny, np.maximum(forward - strike, 0.0), call)
    put = np.where(tiny, np.maximum(strike - forward, 0.0), put)
    if call.ndim == 0:
        return float(call), float(put)
    return call, put


# -------------------------------------------------------------------------
# pricing state
# -------------------------------------------------------------------------

@dataclass(frozen=True)
class PricingState:
    """Risk-neutral law of the path after ``t`` given time-t information."""

    system: StackedSystem
    data: PanelData
    t: int
    belief: StateBelief
    moments: CondMoments

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def t_end(self) -> int:
        return self.t + self.moments.horizon

    @property
    def rate_index(self) -> int:
        """Position of the spot-rate driver z_1 in the reduced vector (b, z, m)."""
        return self.n

    @property
    def log_book(self) -> np.ndarray:
        return self.data.log_book[self.t]

    @property
    def discount(self) -> float:
        return float(self.data.discount[self.t])

    def check_date(self, u: int) -> None:
        if not self.t < u <= self.t_end:
            raise ValueError(f"date {u} outside ({self.t}, {self.t_end}]")


def pricing_state(system: StackedSystem, data: PanelData, t: int,
                  belief: StateBelief | None = None, state: np.ndarray | None = None,
                  t_end: int | None = None) -> PricingState:
    """Build a pricing state from either a belief or an exactly known state m~*_t."""
    if system.measure is not Measure.RISK_NEUTRAL:
        raise ValueError("pricing needs the risk-neutral system")
    if (belief is None) == (state is None):
        raise ValueError("pass exactly one of belief and state")
    if state is not None:
        state = np.asarray(state, dtype=float)
        if state.size != 2 * system.n:
            raise ValueError("state must be m~*_t = (m~_t, m~_{t-1}) of length 2n")
        belief = StateBelief(t, state, np.zeros((state.size, state.size)), "known")
    t_end = system.T if t_end is None else t_end
    if not 0 <= t < t_end <= system.T:
        raise ValueError("need 0 <= t < t_end <= T")
    moments = cond_moments_given_F(system, data, t, belief, t_end)
    if state is not None:
        moments = replace(moments, info="G")
    return PricingState(system, data, t, belief, moments)


def filtered_pricing_state(params: ModelParameters, data: PanelData, t: int,
                           conv: DividendConvention = DividendConvention.BOOK,
                           t_end: int | None = None) -> PricingState:
    """Private-company pricing: the belief is the risk-neutral filter at ``t``."""
    system = risk_neutral_system(params, data, conv)
    belief = kalman_filter(system, data, T=t).belief(t)
    return pricing_state(system, data, t, belief=belief, t_end=t_end)


# -------------------------------------------------------------------------
# forward measure
# -------------------------------------------------------------------------

@dataclass(frozen=True)
class ForwardShift:
    """Mean shift of the path law under the (t, u)-forward measure.

    Rows of ``mean`` and ``c_hat`` are dates t+1..t_end.
    """

    t: int
    u: int
    mean: np.ndarray   # H x n_tilde, shifted conditional means
    c_hat: np.ndarray  # H x n_tilde, intercept corrections (zero from u on)
    a_hat: np.ndarray  # n, drift of the one-step log gain under the forward measure

    def mean_at(self, s: int) -> np.ndarray:
        return self.mean[s - self.t - 1]


def forward_shift(ps: PricingState, u: int) -> ForwardShift:
    ps.check_date(u)
    mom, r = ps.moments, ps.rate_index
    H = mom.horizon
    k = u - ps.t - 1  # number of rate dates t+1..u-1
    shift = mom.cov[:, :, :k, r].sum(axis=2)
    L = mom.noise_loading
    Sigma_xi = ps.system.Sigma_xi
    c_hat = np.zeros((H, ps.system.n_tilde))
    if k:
        # sum over alpha of the rate row's loading on xi_beta, times Sigma_xi
        c_hat = L[:k, r, :, :].sum(axis=0) @ Sigma_xi
    n = ps.n
    a_hat = -0.5 * np.diag(ps.system.Sigma_uu) - c_hat[0, :n]
    return ForwardShift(ps.t, u, mom.mean - shift, c_hat, a_hat)


def forward_system(ps: PricingState, shift: ForwardShift) -> StackedSystem:
    """The system with (t, u)-forward intercepts; useful for simulation."""
    system = ps.system
    nu = system.nu.copy()
    H = shift.c_hat.shape[0]
    dates = np.arange(ps.t + 1, ps.t + 1 + H)
    g_tilde = np.hstack([system.G[dates - 1], np.ones((H, system.ell + system.n))])
    nu[dates - 1] -= g_tilde * shift.c_hat
    return system.with_intercepts(nu, Measure.FORWARD, (shift.t, shift.u))


def log_bond_price(ps: PricingState, u: int) -> float:
    ps.check_date(u)
    r = ps.rate_index
    k = u - ps.t - 1
    spot = ps.data.r_tilde[ps.t]  # r~_{t+1}, known at t
    mean = ps.moments.mean[:k, r].sum()
    var = ps.moments.cov[:k, r, :k, r].sum()
    return float(-spot - mean + 0.5 * var)


def bond_price(ps: PricingState, u: int) -> float:
    """Zero-coupon bond price B_{t,u}."""
    return math.exp(log_bond_price(ps, u))


# -------------------------------------------------------------------------
# terminal log price
# -------------------------------------------------------------------------

def price_selector(ps: PricingState, k: int) -> np.ndarray:
    """Weights W (n x H x n_tilde) with ln P_k - ln B_t = W . path."""
    ps.check_date(k)
    n, nt, H = ps.n, ps.system.n_tilde, ps.moments.horizon
    m0 = n + ps.system.ell
    W = np.zeros((n, H, nt))
    eye = np.eye(n)
    W[:, : k - ps.t, :n] = eye[:, None, :]
    W[:, k - ps.t - 1, m0:m0 + n] = eye
    return W


@dataclass(frozen=True)
class TerminalLogPriceDist:
    k: int
    t: int
    u: int
    mean: np.ndarray
    cov: np.ndarray
    info: str


def terminal_log_price_dist(ps: PricingState, k: int, u: int | None = None,
                            shift: ForwardShift | None = None) -> TerminalLogPriceDist:
    """Law of ln P_k given time-t information under the (t, u)-forward measure (u defaults to k)."""
    u = k if u is None else u
    shift = forward_shift(ps, u) if shift is None else shift
    W = price_selector(ps, k)
    mean = np.einsum("ihj,hj->i", W, shift.mean) + ps.log_book
    cov = sym(np.einsum("ihj,hjgk,lgk->il", W, ps.moments.cov, W))
    return TerminalLogPriceDist(k, ps.t, u, mean, cov, ps.moments.info)


# -------------------------------------------------------------------------
# options
# -------------------------------------------------------------------------

class OptionKind(str, Enum):
    CALL = "call"
    PUT = "put"


@dataclass(frozen=True)
class OptionSpec:
    kind: OptionKind
    strike: np.ndarray
    maturity: int

    def __post_init__(self):
        object.__setattr__(self, "kind", OptionKind(self.kind))
        object.__setattr__(self, "strike", np.atleast_1d(np.asarray(self.strike, dtype=float)))


@dataclass(frozen=True)
class OptionQuote:
    strike: np.ndarray
    call: np.ndarray
    put: np.ndarray
    bond: float
    forward: np.ndarray  # forward-measure mean of P_k

    @property
    def parity_gap(self) -> np.ndarray:
        """call - put - B (F - K); zero up to rounding."""
        return self.call - self.put - self.bond * (self.forward - self.strike)


def option_quote(ps: PricingState, strike, maturity: int, strict: bool = False) -> OptionQuote:
    """Call and put prices on each company's price with the given strikes."""
    dist = terminal_log_price_dist(ps, maturity)
    B = bond_price(ps, maturity)
    var = np.diag(dist.cov)
    strike = np.broadcast_to(np.asarray(strike, dtype=float), dist.mean.shape)
    call, put = lognormal_call_put(dist.mean, var, strike, strict=strict)
    forward = np.exp(dist.mean + 0.5 * var)
    return OptionQuote(strike, B * np.atleast_1d(call), B * np.atleast_1d(put), B, forward)


def option_price(ps: PricingState, spec: OptionSpec, strict: bool = False) -> np.ndarray:
    q = option_quote(ps, spec.strike, spec.maturity, strict)
    return q.call if spec.kind is OptionKind.CALL else q.put


# -------------------------------------------------------------------------
# life insurance
# -------------------------------------------------------------------------

class LifeTable:
    """Survival probabilities _tp_x keyed by issue age ``x`` and duration ``t``."""

    def __init__(self, rows):
        table: dict[float, dict[int, float]] = {}
        for x, t, p in rows:
            t = int(t)
            if t < 0 or not 0.0 <= float(p) <= 1.0:
                raise ValueError(f"invalid life table entry ({x}, {t}, {p})")
            table.setdefault(float(x), {})[t] = float(p)
        for x, col in table.items():
            col.setdefault(0, 1.0)
            if col[0] != 1.0:
                raise ValueError(f"_0p_x must be 1 for age {x}")
            ts = sorted(col)
            if ts != list(range(len(ts))):
                raise IncompleteLifeTable(f"durations for age {x} are not contiguous")
            vals = [col[s] for s in ts]
            if any(b > a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"survival probabilities increase for age {x}")
        self._table = table

    @classmethod
    def from_mortality(cls, x: float, q) -> "LifeTable":
        """Table for one age from one-year death probabilities q_{x}, q_{x+1}, ..."""
        p = np.concatenate([[1.0], np.cumprod(1.0 - np.asarray(q, dtype=float))])
        return cls((x, t, v) for t, v in enumerate(p))

    def ages(self) -> list[float]:
        return sorted(self._table)

    def survival(self, x: float, t: int) -> float:
        """_tp_x."""
        try:
            return self._table[float(x)][int(t)]
        except KeyError:
            raise IncompleteLifeTable(f"no survival probability for age {x}, duration {t}") from None

    def survival_from(self, x: float, t: int, T: int) -> float:
        """_{T-t}p_{x+t}: survive to T having survived to t."""
        return self._conditional(x, t, self.survival(x, T))

    def death_in_year(self, x: float, t: int, k: int) -> float:
        """_{k-t}p_{x+t} q_{x+k}: die between k and k+1 having survived to t."""
        return self._conditional(x, t, self.survival(x, k) - self.survival(x, k + 1))

    def _conditional(self, x: float, t: int, value: float) -> float:
        base = self.survival(x, t)
        if base <= 0.0:
            raise ValueError(f"age {x} has zero survival probability at duration {t}")
        return value / base

    def rows(self):
        for x in self.ages():
            for t, p in sorted(self._table[x].items()):
                yield x, t, p


class Product(str, Enum):
    SEG_TERM = "seg_term"
    SEG_ENDOW = "seg_endow"
    UL_TERM = "ul_term"
    UL_ENDOW = "ul_endow"

    @property
    def is_term(self) -> bool:
        return self in (Product.SEG_TERM, Product.UL_TERM)

    @property
    def unit_linked(self) -> bool:
        return self in (Product.UL_TERM, Product.UL_ENDOW)


@dataclass(frozen=True)
class InsuranceSpec:
    """A T-year product on n funds.

    ``F_star`` and ``G_star`` are fund units and guarantees, either one
    n-vector for all dates or a (maturity x n) schedule whose row k-1 applies
    to a benefit paid at k.  ``age`` is the insured's age at time 0.
    """

    product: Product
    F_star: np.ndarray
    G_star: np.ndarray
    age: float
    maturity: int

    def __post_init__(self):
        object.__setattr__(self, "product", Product(self.product))
        for name in ("F_star", "G_star"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim == 2 and a.shape[0] != self.maturity:
                raise ValueError(f"{name} schedule needs one row per date 1..maturity")
            object.__setattr__(self, name, a)

    def units(self, k: int) -> np.ndarray:
        return self.F_star if self.F_star.ndim < 2 else self.F_star[k - 1]

    def guarantee(self, k: int) -> np.ndarray:
        return self.G_star if self.G_star.ndim < 2 else self.G_star[k - 1]

    def strike(self, k: int) -> np.ndarray:
        F, G = self.units(k), self.guarantee(k)
        if np.any(F <= 0) or np.any(G <= 0):
            raise ValueError("fund units and guarantees must be positive")
        return G / F


def benefit_weights(spec: InsuranceSpec, table: LifeTable, t: int) -> list[tuple[int, float]]:
    """(payment date, probability) pairs for a policy in force at ``t``."""
    if spec.product.is_term:
        return [(k + 1, table.death_in_year(spec.age, t, k)) for k in range(t, spec.maturity)]
    return [(spec.maturity, table.survival_from(spec.age, t, spec.maturity))]


def insurance_premium(ps: PricingState, spec: InsuranceSpec, table: LifeTable,
                      strict: bool = False) -> np.ndarray:
    """Net single premium at ``t`` per fund.

    The guarantee of a unit-linked product is paid at the benefit date, so it
    is discounted with the matching bond price.
    """
    if spec.maturity > ps.t_end:
        raise ValueError("pricing state does not reach the product maturity")
    total = np.zeros(ps.n)
    for k, weight in benefit_weights(spec, table, ps.t):
        if weight == 0.0:
            continue
        q = option_quote(ps, spec.strike(k), k, strict)
        F = spec.units(k)
        if spec.product.unit_linked:
            benefit = F * q.call + q.bond * spec.guarantee(k)
        else:
            benefit = F * q.put
        total += weight * benefit
    return total
