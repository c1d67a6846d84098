"""Hypothesis checkers, the I_k functionals and trajectory-level inequalities."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb

import numpy as np

from . import ops, symm, torus
from .ops import Case, Kind


@dataclass
class SubsolReport:
    is_subsolution: bool
    margin: float
    worst_point: tuple
    worst_direction: int | None
    operator: dict
    note: str = ""
    params: dict = field(default_factory=dict)

    def to_json(self):
        finite = bool(np.isfinite(self.margin))
        return {
            "verdict": bool(self.is_subsolution),
            "margin": float(self.margin) if finite else None,
            "worst_point": [int(i) for i in self.worst_point],
            "worst_direction": self.worst_direction,
            "operator": self.operator,
            "params": self.params,
            "note": self.note,
        }


@dataclass
class FunctionalValue:
    value: float
    k: int
    path_independent_checked: bool = False


def _psi_field(geom, psi):
    return np.broadcast_to(np.asarray(psi, dtype=float), geom.shape)


def _unbounded_report(geom, op, s, note):
    margin = ops.check_domain(op, s)
    worst = np.unravel_index(int(np.argmin(margin)), margin.shape)
    return SubsolReport(True, np.inf, tuple(int(i) for i in worst), None, op.to_dict(),
                        note=note, params={"n": geom.n, "N": geom.N})


def check_subsolution(geom, chi, op, psi, u_under):
    """Margin ``min_{x, i} f_inf(lambda'_(i)[u_under]) - psi`` of the subsolution criterion.

    Every deleted index ``i`` is scanned even though the binding one is the
    largest eigenvalue.
    """
    op = op.resolved(geom.n)
    g = torus.chi_field_of(geom, chi) + torus.complex_hessian(geom, u_under)
    s = torus.sigma_field(geom, g)
    if ops.classify(op) is Case.UNBOUNDED:
        return _unbounded_report(geom, op, s, "unbounded case: every admissible function is a subsolution")
    ops.check_domain(op, s)
    if geom.n < 2:
        raise ValueError("bounded operators need n >= 2")
    lam = torus.eigenvalues(geom, g)
    psi = _psi_field(geom, psi)
    vals = np.stack([ops.f_infinity(op, np.delete(lam, i, axis=-1)) - psi
                     for i in range(geom.n)], axis=-1)
    return _report_from_values(geom, op, vals)


def _report_from_values(geom, op, vals):
    flat = vals.reshape(-1, vals.shape[-1])
    idx = int(np.argmin(flat.min(axis=1)))
    direction = int(np.argmin(flat[idx]))
    margin = float(flat[idx, direction])
    point = tuple(int(i) for i in np.unravel_index(idx, geom.shape))
    return SubsolReport(margin > 0, margin, point, direction, op.to_dict(),
                        params={"n": geom.n, "N": geom.N})


def matrix_sigma_gradients(M, jmax):
    """``d sigma_j / dM`` for ``j = 1..jmax`` as Hermitian matrix fields.

    Uses ``D e_j(M) = sum_{i<j} (-1)^i e_{j-1-i}(M) M^i``; in the eigenframe of
    ``M`` this is ``diag(e_{j-1}(lambda with entry i removed))``.
    """
    n = M.shape[-1]
    e = torus.matrix_elementary(M)
    powers = [np.broadcast_to(np.eye(n, dtype=complex), M.shape)]
    for _ in range(1, jmax):
        powers.append(powers[-1] @ M)
    out = {}
    for j in range(1, jmax + 1):
        D = np.zeros(M.shape, dtype=complex)
        for i in range(j):
            D = D + ((-1) ** i) * e[..., j - 1 - i, None, None] * powers[i]
        out[j] = D / comb(n, j)
    return out


def _generalized_eigs(P, Q):
    """Eigenvalues (ascending) and eigenvectors of the Hermitian pencil ``(P, Q)``, Q > 0."""
    L = np.linalg.cholesky(Q)
    Li = np.linalg.inv(L)
    S = Li @ P @ np.conj(np.swapaxes(Li, -1, -2))
    w, y = np.linalg.eigh(0.5 * (S + np.conj(np.swapaxes(S, -1, -2))))
    x = np.conj(np.swapaxes(Li, -1, -2)) @ y
    return w, x


def check_positivity_condition(geom, chi_prime, op, psi):
    """(n-1, n-1)-form positivity of the quotient hypotheses, evaluated on matrices.

    With ``M`` the reduced form of ``chi'``, ``grad_j = d sigma_j / dM``.  For
    JQuotient and MixedHessian the form ``(c - psi) grad_k - sum_j c_j grad_j``
    must be positive relative to ``grad_k``; the reported margin is the least
    generalized eigenvalue of that pencil.  LogQuotient and InvQuotient use the
    pencil ``(grad_k, grad_l)`` with their respective monotone transforms.
    """
    op = op.resolved(geom.n)
    chi_prime = torus.chi_field_of(geom, chi_prime)
    M = torus.reduce(geom, chi_prime)
    s = torus.matrix_elementary(M) / symm.normalizers(geom.n)
    if ops.classify(op) is Case.UNBOUNDED:
        return _unbounded_report(geom, op, s, "unbounded case: positivity condition is vacuous")
    ops.check_domain(op, s)
    k, ell = op.k, op.ell
    grads = matrix_sigma_gradients(M, k)
    psi = _psi_field(geom, psi)[..., None, None]
    Gk = grads[k]
    if op.kind in (Kind.J_QUOTIENT, Kind.MIXED_HESSIAN):
        if op.kind is Kind.J_QUOTIENT:
            lower = grads[ell]
        else:
            lower = sum(c * grads[j] for j, c in enumerate(op.coeffs, start=1))
        P = (op.c_const - psi) * Gk - lower
        w, x = _generalized_eigs(P, Gk)
        margin_field = w[..., 0]
        vec = x[..., :, 0]
    elif op.kind is Kind.LOG_QUOTIENT:
        w, x = _generalized_eigs(Gk, grads[ell])
        margin_field = np.log(w[..., 0]) - psi[..., 0, 0]
        vec = x[..., :, 0]
    else:
        w, x = _generalized_eigs(grads[ell], Gk)
        margin_field = -w[..., -1] ** (1.0 / (k - ell)) - psi[..., 0, 0]
        vec = x[..., :, -1]
    idx = int(np.argmin(margin_field.reshape(-1)))
    point = np.unravel_index(idx, geom.shape)
    margin = float(margin_field[point])
    # map the worst generalized eigenvector to an eigenvalue index of M
    v = vec[point]
    Mp = M[point]
    mu = float(np.real(np.conj(v) @ Mp @ v) / np.real(np.conj(v) @ v))
    lam = np.sort(np.linalg.eigvalsh(Mp))[::-1]
    direction = int(np.argmin(np.abs(lam - mu)))
    return SubsolReport(margin > 0, margin, tuple(int(i) for i in point), direction, op.to_dict(),
                        params={"n": geom.n, "N": geom.N})


# -- I_k functionals ----------------------------------------------------------

def functional_from_forms(geom, chi_field, chi_phi, phi, k):
    """Closed form ``1/(k+1) sum_j int phi chi_phi^j ^ chi^{k-j} ^ alpha^{n-k}``."""
    mixed = torus.mixed_wedge_ratios(geom, chi_phi, chi_field, k)
    return float(geom.volume * np.mean(phi * mixed.sum(axis=0)) / (k + 1))


def functional_I(geom, chi, phi, k, check_path=False, tol=1e-8):
    """``I_k(phi)`` by the closed-form sum.

    With ``check_path`` the value is compared against quadrature along two
    distinct paths from 0 to ``phi``; a mismatch above ``tol`` raises.
    """
    if not 0 <= k <= geom.n:
        raise ValueError(f"k={k} out of range [0, {geom.n}]")
    chi_field = torus.chi_field_of(geom, chi)
    phi = np.asarray(phi, dtype=float)
    chi_phi = chi_field + torus.complex_hessian(geom, phi)
    val = functional_from_forms(geom, chi_field, chi_phi, phi, k)
    if check_path:
        for path in ("linear", "quadratic"):
            q = path_integral(geom, chi_field, phi, k, path=path)
            if abs(q - val) > tol * max(1.0, abs(val)):
                raise ArithmeticError(f"I_{k} path mismatch on {path} path: {q} vs {val}")
    return FunctionalValue(val, k, path_independent_checked=bool(check_path))


def _path(phi, eta, path):
    """Position and velocity coefficients in ``s`` for the supported paths."""
    if path == "linear":
        return lambda s: s * phi, lambda s: phi
    if path == "quadratic":
        return lambda s: s * s * phi, lambda s: 2 * s * phi
    if path == "bent":
        if eta is None:
            raise ValueError("bent path needs eta")
        return (lambda s: s * s * phi + s * (1 - s) * eta,
                lambda s: 2 * s * phi + (1 - 2 * s) * eta)
    raise ValueError(f"unknown path {path!r}")


def path_integral(geom, chi, phi, k, path="linear", eta=None, nodes=None):
    """``int_0^1 int_X dphi_s/ds chi_{phi_s}^k ^ alpha^{n-k} ds`` by Gauss-Legendre.

    The integrand is a polynomial in ``s`` of degree at most ``2k + 1``, so
    ``k + 1`` nodes are already exact; the default uses ``k + 3``.
    """
    chi_field = torus.chi_field_of(geom, chi)
    phi = np.asarray(phi, dtype=float)
    pos, vel = _path(phi, None if eta is None else np.asarray(eta, dtype=float), path)
    m = nodes or (k + 3)
    x, w = np.polynomial.legendre.leggauss(m)
    s_nodes = 0.5 * (x + 1.0)
    total = 0.0
    for s, wt in zip(s_nodes, 0.5 * w):
        g = chi_field + torus.complex_hessian(geom, pos(s))
        total += wt * torus.integrate(geom, vel(s) * torus.wedge_ratio(geom, g, k))
    return float(total)


def coefficient_identity(k):
    """``sum_{j=p}^k C(k,j) C(j,p) (-1)^{j-p} / (j+1)`` for ``p = 0..k``, exactly.

    Every entry equals ``1/(k+1)``; this is the rearrangement that turns the
    path integral of ``I_k`` into its closed-form sum.
    """
    return [sum(Fraction(comb(k, j) * comb(j, p) * (-1) ** (j - p), j + 1)
                for j in range(p, k + 1)) for p in range(k + 1)]


# -- trajectories -------------------------------------------------------------

@dataclass
class TrajectoryReport:
    sign_ok: bool
    h_monotone: bool
    worst_sign_violation: float
    worst_h_increase: float
    checked_sign: bool
    checked_h: bool


def trajectory_inequalities(records, u_extrema=None, check_sign=True, check_h=True, slack=1e-8):
    """``sup u >= 0 >= inf u`` at each snapshot and ``h(t)`` nonincreasing.

    ``u_extrema`` is a sequence of ``(sup u, inf u)`` pairs aligned with
    ``records``; ``records`` need an ``h_t`` attribute.
    """
    sign_bad = 0.0
    if check_sign and u_extrema is not None:
        for hi, lo in u_extrema:
            sign_bad = max(sign_bad, -hi, lo)
    h = np.array([r.h_t for r in records], dtype=float)
    h = h[np.isfinite(h)]
    inc = float(np.max(np.diff(h))) if check_h and h.size > 1 else 0.0
    return TrajectoryReport(
        sign_ok=sign_bad <= slack,
        h_monotone=inc <= slack,
        worst_sign_violation=float(sign_bad),
        worst_h_increase=max(inc, 0.0),
        checked_sign=bool(check_sign and u_extrema is not None),
        checked_h=bool(check_h),
    )
