"""Elementary symmetric polynomials, their normalized forms and the cones Gamma_k.

Every function here works on the trailing axis of an array, so a whole grid of
eigenvalue vectors (shape ``(..., n)``) can be passed at once.  The normalized
polynomial is ``sigma_j = e_j / C(n, j)`` so that ``sigma_j(t, ..., t) = t**j``.
"""
from __future__ import annotations

from math import comb

import numpy as np


def sort_desc(lam):
    """Return eigenvalue vectors sorted descending along the last axis."""
    lam = np.asarray(lam, dtype=float)
    return -np.sort(-lam, axis=-1)


def elementary_all(lam):
    """All elementary symmetric polynomials ``e_0..e_n`` of ``lam``.

    Uses the incremental product ``prod_i (1 + lam_i x)``, one entry at a time.
    Returns an array of shape ``lam.shape[:-1] + (n + 1,)``.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    e = np.zeros(lam.shape[:-1] + (n + 1,))
    e[..., 0] = 1.0
    for i in range(n):
        x = lam[..., i, None]
        e[..., 1:i + 2] = e[..., 1:i + 2] + x * e[..., 0:i + 1]
    return e


def _check_index(j, n, lo=0):
    if not (lo <= j <= n):
        raise ValueError(f"index j={j} out of range [{lo}, {n}]")


def elementary_sym(lam, j):
    lam = np.asarray(lam, dtype=float)
    _check_index(j, lam.shape[-1])
    return elementary_all(lam)[..., j]


def normalizers(n):
    return np.array([comb(n, j) for j in range(n + 1)], dtype=float)


def sigmas(lam):
    """Normalized ``sigma_0..sigma_n`` along a new trailing axis."""
    lam = np.asarray(lam, dtype=float)
    return elementary_all(lam) / normalizers(lam.shape[-1])


def sigma(lam, j):
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    _check_index(j, n)
    return elementary_all(lam)[..., j] / comb(n, j)


def sigma_jacobian(lam):
    """Gradients of every ``sigma_j`` with respect to the eigenvalues.

    Returns shape ``(..., n + 1, n)``; row ``j`` holds ``d sigma_j / d lam_i``
    and row 0 is identically zero.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    jac = np.zeros(lam.shape[:-1] + (n + 1, n))
    norm = normalizers(n)
    for i in range(n):
        rest = np.delete(lam, i, axis=-1)
        e_rest = elementary_all(rest)
        jac[..., 1:, i] = e_rest / norm[1:]
    return jac


def sigma_gradient(lam, j):
    """``d sigma_j / d lam_i = e_{j-1}(lam without entry i) / C(n, j)``."""
    lam = np.asarray(lam, dtype=float)
    _check_index(j, lam.shape[-1], lo=1)
    return sigma_jacobian(lam)[..., j, :]


def cone_margin(lam, k):
    """``min_{1<=j<=k} sigma_j(lam)``; positive exactly on Gamma_k."""
    lam = np.asarray(lam, dtype=float)
    _check_index(k, lam.shape[-1], lo=1)
    return sigmas(lam)[..., 1:k + 1].min(axis=-1)


def in_cone(lam, k, margin=0.0):
    """True where ``sigma_j(lam) > margin`` for every ``j = 1..k``."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    return cone_margin(lam, k) > margin
