"""Catalog of operators f(lambda) acting on eigenvalue vectors.

Each operator is a function of the normalized symmetric polynomials
``sigma_j``, which lets the grid code evaluate ``f`` straight from
characteristic-polynomial coefficients.  Gradients follow by the chain rule
through :func:`torusflow.symm.sigma_jacobian`.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from . import symm


class Kind(str, Enum):
    LOG_MA = "LogMA"
    LOG_HESSIAN = "LogHessian"
    J_QUOTIENT = "JQuotient"
    LOG_QUOTIENT = "LogQuotient"
    INV_QUOTIENT = "InvQuotient"
    MIXED_HESSIAN = "MixedHessian"
    LINEAR_TRACE = "LinearTrace"


class Case(str, Enum):
    BOUNDED = "Bounded"
    UNBOUNDED = "Unbounded"


QUOTIENTS = (Kind.J_QUOTIENT, Kind.LOG_QUOTIENT, Kind.INV_QUOTIENT, Kind.MIXED_HESSIAN)


class DomainError(ValueError):
    """Eigenvalues left the operator's cone.

    ``sigma_index`` is the first violated ``sigma_j``; ``point`` is a grid
    index (or sample index) when the caller evaluated a batch.
    """

    def __init__(self, message, sigma_index=None, point=None, margin=None):
        super().__init__(message)
        self.sigma_index = sigma_index
        self.point = point
        self.margin = margin


@dataclass(frozen=True)
class OperatorSpec:
    kind: Kind
    k: int | None = None
    ell: int | None = None
    coeffs: tuple = ()
    c_const: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        object.__setattr__(self, "c_const", float(self.c_const))

    def resolved(self, n):
        """Fill defaulted indices for dimension ``n`` and validate."""
        op = self
        if op.kind is Kind.LOG_MA:
            op = replace(op, k=n)
        elif op.kind is Kind.LINEAR_TRACE and op.k is None:
            op = replace(op, k=1)
        elif op.kind is Kind.MIXED_HESSIAN and op.ell is None and op.coeffs:
            op = replace(op, ell=len(op.coeffs))
        op.validate(n)
        return op

    def validate(self, n):
        k, ell = self.k, self.ell
        if self.kind is Kind.LOG_MA:
            if k not in (None, n):
                raise ValueError("LogMA acts on Gamma_n; k must equal n")
            return
        if k is None or not (1 <= k <= n):
            raise ValueError(f"{self.kind.value}: need 1 <= k <= n (k={k}, n={n})")
        if self.kind is Kind.LINEAR_TRACE and k != 1:
            raise ValueError("LinearTrace is sigma_1; k must be 1")
        if self.kind in QUOTIENTS:
            if ell is None or not (1 <= ell < k):
                raise ValueError(f"{self.kind.value}: need 1 <= ell < k (ell={ell}, k={k})")
        if self.kind is Kind.MIXED_HESSIAN:
            if len(self.coeffs) != ell:
                raise ValueError("MixedHessian needs exactly ell coefficients c_1..c_ell")
            if any(c < 0 for c in self.coeffs) or not any(c > 0 for c in self.coeffs):
                raise ValueError("MixedHessian coefficients must be >= 0 and not all zero")

    def cone(self, n):
        """Index ``k`` of the domain cone Gamma_k."""
        if self.kind is Kind.LOG_MA:
            return n
        return self.k

    def with_constant(self, c):
        return replace(self, c_const=float(c))

    def to_dict(self):
        d = asdict(self)
        d["kind"] = self.kind.value
        d["coeffs"] = list(self.coeffs)
        return d

    @classmethod
    def from_dict(cls, d):
        allowed = {"kind", "k", "ell", "coeffs", "c_const"}
        extra = set(d) - allowed
        if extra:
            raise ValueError(f"unknown operator keys: {sorted(extra)}")
        if "kind" not in d:
            raise ValueError("operator.kind is required")
        try:
            Kind(d["kind"])
        except ValueError:
            names = ", ".join(m.value for m in Kind)
            raise ValueError(f"unknown operator kind {d['kind']!r} (expected one of {names})") from None
        return cls(**d)


@dataclass
class OperatorEval:
    value: np.ndarray
    gradient: np.ndarray
    trace: np.ndarray = field(default=None)


def classify(op):
    if op.kind in (Kind.LOG_MA, Kind.LOG_HESSIAN, Kind.LINEAR_TRACE):
        return Case.UNBOUNDED
    return Case.BOUNDED


def check_domain(op, s, floor=0.0):
    """Raise :class:`DomainError` unless every point has ``sigma_j > floor``.

    ``s`` holds normalized sigmas along the last axis (length n + 1).
    Returns the margin array ``min_{j<=k} sigma_j``.
    """
    n = s.shape[-1] - 1
    kc = op.cone(n)
    sub = s[..., 1:kc + 1]
    # plane by plane: the sigma planes are contiguous even when s is a trailing view
    margin = s[..., 1]
    for j in range(2, kc + 1):
        margin = np.minimum(margin, s[..., j])
    bad = ~(margin > floor)
    if np.any(bad):
        flat = np.asarray(margin).reshape(-1)
        worst = int(np.nanargmin(np.where(np.isnan(flat), -np.inf, flat)))
        point = np.unravel_index(worst, np.shape(margin)) if np.ndim(margin) else ()
        row = sub.reshape(-1, kc)[worst]
        j = int(np.argmax(~(row > floor))) + 1
        raise DomainError(
            f"{op.kind.value}: eigenvalues outside Gamma_{kc} "
            f"(sigma_{j} = {row[j - 1]:.3e} at point {tuple(int(p) for p in point)})",
            sigma_index=j, point=tuple(int(p) for p in point), margin=float(flat[worst]))
    return margin


def value_from_sigmas(op, s):
    """``f`` as a function of the normalized sigmas (no domain check)."""
    k, ell = op.k, op.ell
    kind = op.kind
    n = s.shape[-1] - 1
    if kind is Kind.LOG_MA:
        return np.log(s[..., n])
    if kind is Kind.LOG_HESSIAN:
        return np.log(s[..., k])
    if kind is Kind.LINEAR_TRACE:
        return s[..., 1].copy()
    if kind is Kind.J_QUOTIENT:
        return op.c_const - s[..., ell] / s[..., k]
    if kind is Kind.LOG_QUOTIENT:
        return np.log(s[..., k]) - np.log(s[..., ell])
    if kind is Kind.INV_QUOTIENT:
        return -(s[..., ell] / s[..., k]) ** (1.0 / (k - ell))
    if kind is Kind.MIXED_HESSIAN:
        num = sum(c * s[..., j] for j, c in enumerate(op.coeffs, start=1))
        return op.c_const - num / s[..., k]
    raise AssertionError(kind)


def sigma_partials(op, s):
    """Partial derivatives ``dg/dsigma_j`` keyed by ``j``."""
    k, ell = op.k, op.ell
    kind = op.kind
    n = s.shape[-1] - 1
    if kind is Kind.LOG_MA:
        return {n: 1.0 / s[..., n]}
    if kind is Kind.LOG_HESSIAN:
        return {k: 1.0 / s[..., k]}
    if kind is Kind.LINEAR_TRACE:
        return {1: np.ones(s.shape[:-1])}
    if kind is Kind.J_QUOTIENT:
        sk = s[..., k]
        return {ell: -1.0 / sk, k: s[..., ell] / sk**2}
    if kind is Kind.LOG_QUOTIENT:
        return {k: 1.0 / s[..., k], ell: -1.0 / s[..., ell]}
    if kind is Kind.INV_QUOTIENT:
        p = k - ell
        sk = s[..., k]
        r = s[..., ell] / sk
        dr = -(1.0 / p) * r ** (1.0 / p - 1.0)
        return {ell: dr / sk, k: -dr * s[..., ell] / sk**2}
    if kind is Kind.MIXED_HESSIAN:
        sk = s[..., k]
        out = {j: -c / sk for j, c in enumerate(op.coeffs, start=1)}
        num = sum(c * s[..., j] for j, c in enumerate(op.coeffs, start=1))
        out[k] = num / sk**2
        return out
    raise AssertionError(kind)


def trace_from_sigmas(op, s):
    """``sum_i f_i`` using ``sum_i d sigma_j / d lam_i = j sigma_{j-1}``."""
    total = 0.0
    for j, d in sigma_partials(op, s).items():
        total = total + d * j * s[..., j - 1]
    return np.broadcast_to(total, s.shape[:-1]).copy()


def evaluate(op, lam):
    """Value, gradient and ellipticity trace of ``f`` at eigenvalues ``lam``.

    Raises :class:`DomainError` when ``lam`` is not in the domain cone.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    op = op.resolved(n)
    s = symm.sigmas(lam)
    check_domain(op, s)
    jac = symm.sigma_jacobian(lam)
    grad = np.zeros(lam.shape)
    for j, d in sigma_partials(op, s).items():
        grad = grad + np.asarray(d)[..., None] * jac[..., j, :]
    return OperatorEval(value=value_from_sigmas(op, s), gradient=grad,
                        trace=trace_from_sigmas(op, s))


def value(op, lam):
    lam = np.asarray(lam, dtype=float)
    op = op.resolved(lam.shape[-1])
    s = symm.sigmas(lam)
    check_domain(op, s)
    return value_from_sigmas(op, s)


def f_infinity(op, lam_prime):
    """Limit of ``f(lam', mu)`` as ``mu -> +inf``.

    ``lam_prime`` has length ``n - 1`` on its last axis; the sigmas here use
    the (n-1)-dimensional normalization.  Unbounded operators return +inf.
    """
    lam_prime = np.asarray(lam_prime, dtype=float)
    m = lam_prime.shape[-1]
    op = op.resolved(m + 1)
    if classify(op) is Case.UNBOUNDED:
        return np.full(lam_prime.shape[:-1], np.inf)
    k, ell = op.k, op.ell
    s = symm.sigmas(lam_prime)
    if k - 1 >= 1:
        margin = s[..., 1:k].min(axis=-1)
        if np.any(~(margin > 0)):
            worst = int(np.argmin(np.asarray(margin).reshape(-1)))
            raise DomainError(f"lambda' outside Gamma_{k - 1} in dimension {m}",
                              sigma_index=k - 1, point=worst, margin=float(np.min(margin)))
    denom = k * s[..., k - 1]
    if op.kind is Kind.J_QUOTIENT:
        return op.c_const - ell * s[..., ell - 1] / denom
    if op.kind is Kind.LOG_QUOTIENT:
        return np.log(denom / (ell * s[..., ell - 1]))
    if op.kind is Kind.INV_QUOTIENT:
        return -(ell * s[..., ell - 1] / denom) ** (1.0 / (k - ell))
    if op.kind is Kind.MIXED_HESSIAN:
        num = sum(j * c * s[..., j - 1] for j, c in enumerate(op.coeffs, start=1))
        return op.c_const - num / denom
    raise AssertionError(op.kind)
