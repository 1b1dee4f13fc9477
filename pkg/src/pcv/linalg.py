"""Small dense linear-algebra helpers shared across modules."""

from __future__ import annotations

import numpy as np

PSD_TOL = 1e-10


def sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def is_psd(m: np.ndarray, tol: float = PSD_TOL) -> bool:
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return True
    return bool(np.linalg.eigvalsh(sym(m)).min() >= -tol)


def floor_eigenvalues(m: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Symmetrize and lift eigenvalues below ``floor``."""
    s = sym(np.asarray(m, dtype=float))
    vals, vecs = np.linalg.eigh(s)
    if vals.min() >= floor:
        return s
    vals = np.maximum(vals, floor)
    return sym((vecs * vals) @ vecs.T)


def pinv_sym(m: np.ndarray, rel_cutoff: float) -> tuple[np.ndarray, bool]:
    """Pseudo-inverse of a symmetric matrix via its eigendecomposition.

    Eigenvalues below ``rel_cutoff * max|eigenvalue|`` are discarded.  The flag
    reports whether anything was dropped.
    """
    s = sym(np.asarray(m, dtype=float))
    if s.size == 0:
        return s.copy(), False
    vals, vecs = np.linalg.eigh(s)
    top = np.abs(vals).max()
    if top == 0.0:
        return np.zeros_like(s), True
    keep = np.abs(vals) > rel_cutoff * top
    inv = np.where(keep, 1.0 / np.where(keep, vals, 1.0), 0.0)
    return sym((vecs * inv) @ vecs.T), bool((~keep).any())


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Matrix ``L`` with ``L @ L.T == m``; Cholesky when possible, clipped eigen otherwise."""
    s = sym(np.asarray(m, dtype=float))
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(s)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))

