"""Damped Newton-Krylov solver for the stationary equation ``f(lambda[u]) = psi + c``.

It shares only the pointwise operator evaluation with the flow; the iteration,
the linearization and the stopping rule are independent of the time stepper.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from . import analysis, ops, torus
from .flow import Problem
from .ops import DomainError

log = logging.getLogger(__name__)


class OracleFailure(RuntimeError):
    pass


@dataclass
class OracleResult:
    u: np.ndarray
    c: float
    residual: float
    iterations: int
    krylov_iterations: int


def _coefficients(problem, ev):
    """Real weights of ``v -> sum_{jk} W_kj (d_j d_kbar v)`` at the current iterate."""
    geom = problem.geom
    M = ev.M.to_matrix()
    partials = ops.sigma_partials(problem.op, ev.s)
    grads = analysis.matrix_sigma_gradients(M, max(partials))
    W = sum(np.asarray(d)[..., None, None] * grads[j] for j, d in partials.items())
    if not geom.is_identity:
        Li = geom.chol_inv
        W = Li.conj().T @ W @ Li
    n = geom.n
    a = [np.ascontiguousarray(W[..., j, j].real) for j in range(n)]
    b, c = {}, {}
    for j in range(n):
        for k in range(j + 1, n):
            b[j, k] = np.ascontiguousarray(2.0 * W[..., k, j].real)
            c[j, k] = np.ascontiguousarray(-2.0 * W[..., k, j].imag)
    return a, b, c


def _apply(coef, H):
    a, b, c = coef
    out = sum(aj * hj for aj, hj in zip(a, H.diag))
    for key in b:
        out = out + b[key] * H.re[key] + c[key] * H.im[key]
    return out


def _symbol(geom, coef):
    """Fourier symbol of the constant-coefficient operator with averaged weights."""
    N, n = geom.N, geom.n
    m = np.fft.fftfreq(N, d=1.0 / N)
    d1 = 2j * np.pi * m
    d1[N // 2] = 0.0
    d2 = -(2 * np.pi * m) ** 2

    def axis(vec, ax):
        shp = [1] * (2 * n)
        shp[ax] = N
        return vec.reshape(shp)

    a, b, c = coef
    sym = np.zeros(geom.shape, dtype=complex)
    for j in range(n):
        sym = sym + np.mean(a[j]) * 0.25 * (axis(d2, 2 * j) + axis(d2, 2 * j + 1))
    for (j, k), bjk in b.items():
        xj, yj, xk, yk = (axis(d1, 2 * j), axis(d1, 2 * j + 1), axis(d1, 2 * k), axis(d1, 2 * k + 1))
        re = 0.25 * (xj * xk + yj * yk)
        im = 0.25 * (xj * yk - yj * xk)
        sym = sym + np.mean(bjk) * re + np.mean(c[j, k]) * im
    sym = sym.real
    sym.flat[0] = 1.0
    return sym


def newton_oracle(geom, chi, op, psi, u_init=None, tol=1e-10, max_iter=50,
                  krylov_rtol=1e-12, min_step=1e-4):
    """Solve ``f(lambda[u]) - psi - c = 0`` with ``mean(u) = 0`` for ``(u, c)``.

    Each Newton step solves the bordered linear system
    ``L_u v - dc = -R``, ``mean(v) = -mean(u)`` with GMRES, preconditioned by
    the inverse of the constant-coefficient operator with grid-averaged
    weights.  Steps are damped by backtracking on ``||R||_2`` with cone backoff.
    """
    problem = Problem(geom, chi, op, psi)
    size = geom.size
    u = np.zeros(geom.shape) if u_init is None else np.array(u_init, dtype=float)
    u = u - u.mean()
    try:
        ev = problem.evaluate(u)
    except DomainError as exc:
        raise OracleFailure(f"initial guess not admissible: {exc}") from exc
    c = float(np.mean(ev.rhs))
    R = ev.rhs - c
    res = float(np.max(np.abs(R)))
    total_krylov = 0
    for it in range(max_iter):
        if res <= tol:
            log.info("oracle converged in %d iterations (residual %.2e)", it, res)
            return OracleResult(u, c, res, it, total_krylov)
        coef = _coefficients(problem, ev)
        sym = _symbol(geom, coef)

        def matvec(x):
            v = x[:size].reshape(geom.shape)
            Lv = _apply(coef, torus.hessian_parts(geom, v))
            return np.concatenate([(Lv - x[size]).ravel(), [v.mean()]])

        def precond(y):
            y1 = y[:size].reshape(geom.shape)
            dc = -y1.mean()
            vh = np.fft.fftn(y1) / sym
            vh.flat[0] = y[size] * size
            v = np.fft.ifftn(vh).real
            return np.concatenate([v.ravel(), [dc]])

        A = LinearOperator((size + 1, size + 1), matvec=matvec, dtype=float)
        P = LinearOperator((size + 1, size + 1), matvec=precond, dtype=float)
        rhs_vec = np.concatenate([-R.ravel(), [-u.mean()]])
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = gmres(A, rhs_vec, M=P, rtol=krylov_rtol, atol=0.0, restart=60, maxiter=20,
                        callback=cb, callback_type="pr_norm")
        total_krylov += count[0]
        if info < 0:
            raise OracleFailure(f"GMRES breakdown (info={info})")
        v = x[:size].reshape(geom.shape)
        dc = float(x[size])
        norm0 = float(np.linalg.norm(R))
        step = 1.0
        while True:
            if step < min_step:
                raise OracleFailure(f"line search failed at iteration {it} (residual {res:.3e})")
            u_try = u + step * v
            try:
                ev_try = problem.evaluate(u_try)
            except DomainError:
                step *= 0.5
                continue
            c_try = c + step * dc
            R_try = ev_try.rhs - c_try
            if np.linalg.norm(R_try) <= (1 - 1e-4 * step) * norm0 or np.max(np.abs(R_try)) <= tol:
                break
            step *= 0.5
        u, c, ev, R = u_try - u_try.mean(), c_try, ev_try, R_try
        res = float(np.max(np.abs(R)))
        log.debug("oracle it %d: step %.3g residual %.3e (%d krylov)", it, step, res, count[0])
    if res <= tol:
        return OracleResult(u, c, res, max_iter, total_krylov)
    raise OracleFailure(f"no convergence in {max_iter} iterations (residual {res:.3e})")
