"""Model dimensions, parameters, panel data and the log-linearization.

Time runs over t = 1..T.  Per-time arrays have T rows and row ``t - 1`` holds
time ``t``.  Diagonal per-time matrices (the dividend loadings ``G_t``) are
stored as their diagonals, shape (T, n).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import block_diag

from .linalg import is_psd, sym


class DividendConvention(str, Enum):
    """Which ratio the deterministic dividend driver is quoted against."""

    BOOK = "book"    # log dividend-to-book
    PRICE = "price"  # log dividend-to-price


class ModelError(ValueError):
    """Base class for invalid model inputs."""


class ShapeMismatch(ModelError):
    pass


class NotPSD(ModelError):
    pass


class PhiOutOfDomain(ModelError):
    def __init__(self, t: int, i: int, phi: float):
        super().__init__(f"phi[t={t}, company={i}] = {phi:.6g} >= 0; linearization undefined")
        self.t, self.i, self.phi = t, i, phi


@dataclass(frozen=True)
class ModelDims:
    n: int      # companies
    ell: int    # economic variables; the first one is the log spot rate
    p: int      # VAR lag order
    l: int      # exogenous regressors
    T: int      # sample length

    @property
    def n_tilde(self) -> int:
        return 2 * self.n + self.ell

    @property
    def n_tilde_star(self) -> int:
        return 3 * self.n + self.ell * self.p


@dataclass(frozen=True)
class ModelParameters:
    C_k: np.ndarray        # n x l, required-return loadings
    C_z: np.ndarray        # ell x l
    A: np.ndarray          # ell x ell*p, [A_1 : ... : A_p]
    C_m: np.ndarray        # n x l, drift of the price-to-book state
    Sigma_eta: np.ndarray  # (n+ell) x (n+ell), joint covariance of (u, v)
    Sigma_ww: np.ndarray   # n x n
    mu_0: np.ndarray       # n
    Sigma_0: np.ndarray    # n x n

    def __post_init__(self):
        for f in dataclasses.fields(self):
            object.__setattr__(self, f.name, np.array(getattr(self, f.name), dtype=float))

    @property
    def n(self) -> int:
        return self.C_k.shape[0]

    @property
    def ell(self) -> int:
        return self.C_z.shape[0]

    @property
    def p(self) -> int:
        return self.A.shape[1] // self.A.shape[0]

    @property
    def l(self) -> int:
        return self.C_k.shape[1]

    @property
    def Sigma_uu(self) -> np.ndarray:
        return self.Sigma_eta[: self.n, : self.n]

    @property
    def Sigma_uv(self) -> np.ndarray:
        return self.Sigma_eta[: self.n, self.n:]

    @property
    def Sigma_vu(self) -> np.ndarray:
        return self.Sigma_eta[self.n:, : self.n]

    @property
    def Sigma_vv(self) -> np.ndarray:
        return self.Sigma_eta[self.n:, self.n:]

    @property
    def Sigma_xi(self) -> np.ndarray:
        """Covariance of the full noise vector (u, v, w)."""
        return block_diag(self.Sigma_eta, self.Sigma_ww)

    def replace(self, **changes) -> "ModelParameters":
        return dataclasses.replace(self, **changes)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(getattr(self, f.name)) for f in dataclasses.fields(self)])

    def blocks(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


@dataclass(frozen=True)
class PanelData:
    B0: np.ndarray             # n, initial book values
    b_tilde: np.ndarray        # T x n, log book-value growth
    z: np.ndarray              # T x ell, economic variables
    z0_star: np.ndarray        # ell*p, (z_0, z_{-1}, ..., z_{1-p}) stacked
    delta_tilde: np.ndarray    # T x n, log dividend ratios
    pays_dividend: np.ndarray  # T x n, bool
    psi: np.ndarray            # T x l, exogenous regressors
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("B0", "b_tilde", "z", "z0_star", "delta_tilde", "psi"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        object.__setattr__(self, "pays_dividend", np.array(self.pays_dividend, dtype=bool))

    @property
    def T(self) -> int:
        return self.b_tilde.shape[0]

    @property
    def n(self) -> int:
        return self.b_tilde.shape[1]

    @property
    def ell(self) -> int:
        return self.z.shape[1]

    @property
    def p(self) -> int:
        return self.z0_star.size // self.ell

    @property
    def l(self) -> int:
        return self.psi.shape[1]

    @property
    def dims(self) -> ModelDims:
        return ModelDims(self.n, self.ell, self.p, self.l, self.T)

    def z_star(self, t: int) -> np.ndarray:
        """Stacked lags (z_t, ..., z_{t-p+1}) for t = 0..T."""
        return self.z_lags[t]

    @property
    def z_lags(self) -> np.ndarray:
        """Row t (t = 0..T) is z*_t; row t-1 is therefore the regressor of time t."""
        if "z_lags" not in self._cache:
            p, ell = self.p, self.ell
            history = np.vstack([self.z0_star.reshape(p, ell)[::-1], self.z])  # times 1-p..T
            rows = [history[t + p - 1 - np.arange(p)].ravel() for t in range(self.T + 1)]
            self._cache["z_lags"] = np.array(rows)
        return self._cache["z_lags"]

    @property
    def r_tilde(self) -> np.ndarray:
        """Log spot rates r~_t for t = 1..T+1 (r~_t is the first component of z_{t-1})."""
        return self.z_lags[:, 0]

    @property
    def log_book(self) -> np.ndarray:
        """ln B_t for t = 0..T, shape (T+1, n)."""
        return np.vstack([np.log(self.B0), np.log(self.B0) + np.cumsum(self.b_tilde, axis=0)])

    @property
    def discount(self) -> np.ndarray:
        """D_t = exp(-sum_{s<=t} r~_s) for t = 0..T."""
        return np.exp(-np.concatenate([[0.0], np.cumsum(self.r_tilde[: self.T])]))

    @property
    def psi_before(self) -> np.ndarray:
        """Row t-1 holds sum_{s<t} psi_s."""
        return np.vstack([np.zeros(self.l), np.cumsum(self.psi, axis=0)[:-1]])

    def truncate(self, T: int) -> "PanelData":
        return PanelData(self.B0, self.b_tilde[:T], self.z[:T], self.z0_star,
                         self.delta_tilde[:T], self.pays_dividend[:T], self.psi[:T])


@dataclass(frozen=True)
class Linearization:
    """Per-time, per-company linearization constants; non-payers have g=1, h=0, mu=-inf."""

    phi: np.ndarray
    g: np.ndarray
    h: np.ndarray
    mu: np.ndarray
    pays: np.ndarray


def linearize_arrays(params: ModelParameters, delta: np.ndarray, pays: np.ndarray,
                     psi: np.ndarray, conv: DividendConvention = DividendConvention.BOOK) -> Linearization:
    delta = np.asarray(delta, dtype=float)
    pays = np.asarray(pays, dtype=bool)
    phi = delta - psi @ params.C_k.T
    if DividendConvention(conv) is DividendConvention.BOOK:
        psi_before = np.vstack([np.zeros((1, psi.shape[1])), np.cumsum(psi, axis=0)[:-1]])
        phi = phi - (params.mu_0 + psi_before @ params.C_m.T)
    phi = np.where(pays, phi, 0.0)
    bad = np.argwhere(pays & ~(phi < 0))
    if bad.size:
        t, i = bad[0]
        raise PhiOutOfDomain(int(t) + 1, int(i), float(phi[t, i]))
    with np.errstate(over="ignore", divide="ignore"):
        em1 = np.expm1(-np.where(pays, phi, -1.0))      # e^{-phi} - 1 > 0 for payers
        g = np.where(pays, -1.0 / np.expm1(np.where(pays, phi, -1.0)), 1.0)
        mu = np.where(pays, -np.log(em1), -np.inf)
        h = np.where(pays, -phi * g - np.log(em1), 0.0)
    return Linearization(phi=phi, g=g, h=h, mu=mu, pays=pays)


def linearization(params: ModelParameters, data: PanelData,
                  conv: DividendConvention = DividendConvention.BOOK) -> Linearization:
    """Expansion point of the log-linear return identity for every (t, company).

    Under the dividend-to-price convention the expansion point does not depend
    on the state drift, so only the required-return term enters.
    """
    return linearize_arrays(params, data.delta_tilde, data.pays_dividend, data.psi, conv)


@dataclass(frozen=True)
class RealSystemCoefficients:
    nu_b: np.ndarray   # T x n
    Psi_b: np.ndarray  # T x n x 2n
    nu_z: np.ndarray   # T x ell
    nu_m: np.ndarray   # T x n
    G: np.ndarray      # T x n, diagonal of G_t


def state_loading(g: np.ndarray, conv: DividendConvention) -> np.ndarray:
    """Psi_{b,t} = [-I : G_t] (book) or [-I : I] (price), stacked over t."""
    T, n = g.shape
    out = np.zeros((T, n, 2 * n))
    idx = np.arange(n)
    out[:, idx, idx] = -1.0
    out[:, idx, n + idx] = g if DividendConvention(conv) is DividendConvention.BOOK else 1.0
    return out


def real_system_arrays(params: ModelParameters, lin: Linearization, delta: np.ndarray,
                       psi: np.ndarray, conv: DividendConvention) -> RealSystemCoefficients:
    g = lin.g
    delta = np.where(lin.pays, delta, 0.0)
    nu_b = g * (psi @ params.C_k.T) - (g - 1.0) * delta - lin.h
    return RealSystemCoefficients(
        nu_b=nu_b,
        Psi_b=state_loading(g, conv),
        nu_z=psi @ params.C_z.T,
        nu_m=psi @ params.C_m.T,
        G=g.copy(),
    )


def real_system(params: ModelParameters, data: PanelData, lin: Linearization,
                conv: DividendConvention = DividendConvention.BOOK) -> RealSystemCoefficients:
    return real_system_arrays(params, lin, data.delta_tilde, data.psi, conv)


@dataclass
class ValidationReport:
    problems: list[str]

    @property
    def ok(self) -> bool:
        return not self.problems

    def raise_if_failed(self) -> None:
        if self.problems:
            kind = NotPSD if any("PSD" in p or "definite" in p for p in self.problems) else ShapeMismatch
            raise kind("; ".join(self.problems))


def validate_model(dims: ModelDims, params: ModelParameters, data: PanelData) -> ValidationReport:
    problems: list[str] = []
    n, ell, p, l, T = dims.n, dims.ell, dims.p, dims.l, dims.T
    expected = {
        "C_k": (n, l), "C_z": (ell, l), "A": (ell, ell * p), "C_m": (n, l),
        "Sigma_eta": (n + ell, n + ell), "Sigma_ww": (n, n), "mu_0": (n,), "Sigma_0": (n, n),
    }
    for name, shape in expected.items():
        if getattr(params, name).shape != shape:
            problems.append(f"{name} shape {getattr(params, name).shape} != {shape}")
    data_shapes = {
        "B0": (n,), "b_tilde": (T, n), "z": (T, ell), "z0_star": (ell * p,),
        "delta_tilde": (T, n), "pays_dividend": (T, n), "psi": (T, l),
    }
    for name, shape in data_shapes.items():
        actual = getattr(data, name).shape
        if actual != shape:
            if len(actual) == len(shape) and actual[0] != shape[0] and actual[1:] == shape[1:]:
                problems.append(f"{name}: length mismatch ({actual[0]} rows, expected {shape[0]})")
            else:
                problems.append(f"{name} shape {actual} != {shape}")
    if problems:
        return ValidationReport(problems)

    for name in ("Sigma_eta", "Sigma_ww", "Sigma_0"):
        if not is_psd(getattr(params, name)):
            problems.append(f"{name} not PSD")
    for name, block in (("Sigma_uu", params.Sigma_uu), ("Sigma_vv", params.Sigma_vv)):
        if np.linalg.eigvalsh(sym(block)).min() <= 0:
            problems.append(f"{name} not positive definite")
    if np.any(data.B0 <= 0):
        problems.append("B0 must be strictly positive")
    for name in ("b_tilde", "z", "z0_star", "psi"):
        if not np.all(np.isfinite(getattr(data, name))):
            problems.append(f"{name} has non-finite entries")
    if not np.all(np.isfinite(data.delta_tilde[data.pays_dividend])):
        problems.append("delta_tilde has non-finite entries for dividend payers")
    for f in dataclasses.fields(params):
        if not np.all(np.isfinite(getattr(params, f.name))):
            problems.append(f"{f.name} has non-finite entries")
    return ValidationReport(problems)
