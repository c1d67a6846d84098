"""Explicit integration of ``du/dt = f(lambda[u]) - psi`` with cone backoff and monitors."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import astuple, dataclass, field

import numpy as np

from . import ops, symm, torus
from .ops import DomainError

log = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "dt", "c_t", "osc_dtu", "max_dtu", "min_dtu", "cone_margin",
               "ellipticity_trace", "I_k", "h_t", "residual")

# RK4 reaches |z| = 2.785 on the negative real axis
RK4_REAL_BOUND = 2.785


class ConeExitError(RuntimeError):
    """The flow left the admissible cone and step halving could not recover."""

    def __init__(self, message, state=None, records=None, cause=None):
        super().__init__(message)
        self.state = state
        self.records = records or []
        self.cause = cause


class AlreadyConverged(ValueError):
    pass


@dataclass
class FlowParams:
    tol_osc: float = 1e-9
    tol_res: float = 1e-7
    cone_floor: float = 1e-8
    t_max: float = 200.0
    cfl: float = 2.5
    step_cap: float = 0.1
    max_retries: int = 30
    dt_min_factor: float = 1e-8
    growth: float = 1.25
    max_steps: int | None = None
    snapshot_every: int = 0
    functional_every: int = 1

    def __post_init__(self):
        if not 0 < self.cfl <= RK4_REAL_BOUND:
            raise ValueError(f"cfl must lie in (0, {RK4_REAL_BOUND}]")
        if self.cone_floor < 0 or self.tol_osc <= 0 or self.tol_res <= 0:
            raise ValueError("tolerances must be positive and cone_floor >= 0")
        if self.t_max < 0:
            raise ValueError("t_max must be >= 0")


@dataclass
class FlowState:
    u: np.ndarray
    t: float = 0.0
    dt: float = 0.0
    step_count: int = 0
    rejected: int = 0
    dt_limit: float = 0.0


@dataclass
class DiagRecord:
    t: float
    dt: float
    c_t: float
    osc_dtu: float
    max_dtu: float
    min_dtu: float
    cone_margin: float
    ellipticity_trace: float
    I_k: float
    h_t: float
    residual: float


@dataclass
class Evaluation:
    M: torus.HermParts
    s: np.ndarray
    margin: np.ndarray
    rhs: np.ndarray


class Problem:
    """Geometry, reference form, operator and right-hand side of one flow."""

    def __init__(self, geom, chi, op, psi=0.0):
        self.geom = geom
        self.op = op.resolved(geom.n)
        self.chi = torus.chi_field_of(geom, chi)
        self.psi = np.broadcast_to(np.asarray(psi, dtype=float), geom.shape).copy()
        flat = self.chi.reshape(-1, geom.n, geom.n)
        if np.array_equal(flat, np.broadcast_to(flat[0], flat.shape)):
            # constant reference form: keep 0-d parts so adding it is a broadcast
            self.chi_parts = torus.HermParts.from_matrix(torus.reduce(geom, flat[0]))
        else:
            self.chi_parts = torus.reduce_parts(geom, torus.HermParts.from_matrix(self.chi))
        self.class_ints = geom.volume * self.chi_parts.sigmas().reshape(-1, geom.n + 1).mean(axis=0)
        self.k = self.op.cone(geom.n)
        self.ell = self.op.ell if self.op.ell is not None else self.k

    def evaluate(self, u, floor=0.0):
        H = torus.reduce_parts(self.geom, torus.hessian_parts(self.geom, u))
        M = H + self.chi_parts
        s = M.sigmas()
        margin = ops.check_domain(self.op, s, floor)
        rhs = ops.value_from_sigmas(self.op, s) - self.psi
        return Evaluation(M, s, margin, rhs)

    def rhs(self, u):
        return self.evaluate(u).rhs

    def fmax(self, ev):
        """Largest ``f_i`` over the grid.

        ``d sigma_j / d lam_i = e_{j-1}(lam without i) / C(n, j)``, and the
        deleted polynomials follow from ``e`` by synthetic division.
        """
        n = self.geom.n
        lam = ev.M.eigenvalues(fast=True)
        norm = symm.normalizers(n)
        e = [ev.s[..., j] * norm[j] for j in range(n + 1)]
        partials = ops.sigma_partials(self.op, ev.s)
        jmax = max(partials)
        best = -np.inf
        for i in range(n):
            li = lam[..., i]
            r = [np.ones_like(li)]
            for m in range(1, jmax):
                r.append(e[m] - li * r[-1])
            fi = sum(d * r[j - 1] / norm[j] for j, d in partials.items())
            best = max(best, float(np.max(fi)))
        return best

    def dt_max(self, ev, cfl):
        # the largest symbol of sum f_i d_i d_ibar is pi^2 n N^2 fmax / (2 lambda_min(alpha))
        g = self.geom
        return cfl * 2.0 * g.alpha_min_eig / (np.pi**2 * g.n * g.N**2 * self.fmax(ev))

    def functional(self, u, ev, k):
        """``I_k(u)`` from the closed-form sum, reusing the evaluated form.

        ``sum_j m_j / (k + 1)`` over the mixed ratios of ``(chi_u, chi)`` equals
        ``int_0^1 sigma_k((1 - t) chi + t chi_u) dt`` by the Beta integral; the
        integrand has degree k in t, so ceil((k + 1) / 2) Gauss nodes are exact.
        """
        x, w = np.polynomial.legendre.leggauss(k // 2 + 1)
        norm = symm.normalizers(self.geom.n)[k]
        acc = 0.0
        for t, wt in zip(0.5 * (x + 1.0), 0.5 * w):
            P = ev.M.lerp(self.chi_parts, 1.0 - t)
            acc = acc + wt * P.elementary_k(k)
        return float(self.geom.volume * np.mean(u * acc) / norm)

    def record(self, u, ev, t, dt, with_functional=True):
        v = ev.rhs
        c_t = float(np.mean(v))
        vmax, vmin = float(v.max()), float(v.min())
        trace = ops.trace_from_sigmas(self.op, ev.s)
        if with_functional:
            I_k = self.functional(u, ev, self.k)
            I_l = I_k if self.ell == self.k else self.functional(u, ev, self.ell)
            h_t = I_l / self.class_ints[self.ell]
        else:
            I_k = h_t = float("nan")
        return DiagRecord(t=float(t), dt=float(dt), c_t=c_t, osc_dtu=vmax - vmin,
                          max_dtu=vmax, min_dtu=vmin, cone_margin=float(ev.margin.min()),
                          ellipticity_trace=float(trace.min()), I_k=float(I_k), h_t=float(h_t),
                          residual=max(vmax - c_t, c_t - vmin))


def rhs(geom, chi, op, psi, u):
    """Pointwise ``f(lambda(alpha^{-1}(chi + i d dbar u))) - psi``."""
    return Problem(geom, chi, op, psi).rhs(u)


def normalize(geom, u):
    """Subtract the alpha^n-weighted mean (uniform for constant alpha)."""
    u = np.asarray(u, dtype=float)
    return u - np.mean(u)


def _rk4_trial(problem, u, k1, dt):
    k2 = problem.evaluate(u + 0.5 * dt * k1).rhs
    k3 = problem.evaluate(u + 0.5 * dt * k2).rhs
    k4 = problem.evaluate(u + dt * k3).rhs
    return u + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def step(problem, state, params, ev=None):
    """One accepted RK4 step, halving ``dt`` on cone violation or oversized updates.

    Returns ``(new_state, evaluation_at_new_state, dt_taken)``.  The returned
    state's ``dt`` is the proposal for the next step.
    """
    if ev is None:
        ev = problem.evaluate(state.u, params.cone_floor)
    limit = state.dt_limit if state.dt_limit > 0 else problem.dt_max(ev, params.cfl)
    dt = state.dt if state.dt > 0 else limit
    if dt < params.dt_min_factor * limit:
        # accepted steps shrinking geometrically: the state is creeping onto the cone floor
        raise ConeExitError(f"step size underflow at t={state.t:.6g} (dt = {dt:.3e}); "
                            f"the flow is pinned against the cone floor {params.cone_floor}",
                            state=state)
    rejected = 0
    last = None
    for _ in range(params.max_retries + 1):
        try:
            u_new = _rk4_trial(problem, state.u, ev.rhs, dt)
            du = float(np.max(np.abs(u_new - state.u)))
            if du > params.step_cap:
                raise DomainError(f"|du| = {du:.3e} exceeds step_cap {params.step_cap}")
            ev_new = problem.evaluate(u_new, params.cone_floor)
        except DomainError as exc:
            last = exc
            rejected += 1
            dt *= 0.5
            continue
        limit = problem.dt_max(ev_new, params.cfl)
        new = FlowState(u=u_new, t=state.t + dt, dt=min(dt * params.growth, limit),
                        step_count=state.step_count + 1, rejected=state.rejected + rejected,
                        dt_limit=limit)
        return new, ev_new, dt
    raise ConeExitError(f"flow left admissible cone at t={state.t:.6g} after "
                        f"{params.max_retries} step halvings: {last}", state=state, cause=last)


@dataclass
class FlowResult:
    state: FlowState
    records: list
    converged: bool
    reason: str
    c: float
    u_tilde: np.ndarray
    u_extrema: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def _advisory(problem, ev, u0, u_under):
    """Pre-run check of the initial-data inequality for a time-independent subsolution."""
    sup = float(ev.rhs.max())
    if sup > 0:
        return (f"initial data do not satisfy sup(F(A[u0]) - psi) <= 0 (sup = {sup:.3e}); "
                "convergence then relies on the alternative hypothesis")
    return None


def run(problem, u0, params=None, u_under=None, on_record=None, on_snapshot=None):
    """Integrate until ``osc_dtu < tol_osc`` and ``residual < tol_res``, or ``t > t_max``.

    A record is produced at t = 0 and after every accepted step.  On cone exit
    :class:`ConeExitError` is raised carrying the records so far.
    """
    params = params or FlowParams()
    u = np.array(u0, dtype=float, copy=True)
    ev = problem.evaluate(u, params.cone_floor)
    notes = []
    if u_under is not None:
        msg = _advisory(problem, ev, u, u_under)
        if msg:
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            notes.append(msg)
    limit = problem.dt_max(ev, params.cfl)
    state = FlowState(u=u, t=0.0, dt=limit, dt_limit=limit)
    records = []
    extrema = []

    def emit(st, e, dt):
        with_f = params.functional_every > 0 and st.step_count % params.functional_every == 0
        rec = problem.record(st.u, e, st.t, dt, with_functional=with_f)
        records.append(rec)
        extrema.append((float(st.u.max()), float(st.u.min())))
        if on_record:
            on_record(rec)
        if on_snapshot and params.snapshot_every and st.step_count % params.snapshot_every == 0:
            on_snapshot(st)
        return rec

    rec = emit(state, ev, 0.0)
    converged = rec.osc_dtu < params.tol_osc and rec.residual < params.tol_res
    reason = "converged" if converged else "t_max"
    while not converged:
        if state.t >= params.t_max:
            reason = "t_max"
            break
        if params.max_steps is not None and state.step_count >= params.max_steps:
            reason = "max_steps"
            break
        try:
            state, ev, dt = step(problem, state, params, ev)
        except ConeExitError as exc:
            exc.records = records
            raise
        rec = emit(state, ev, dt)
        converged = rec.osc_dtu < params.tol_osc and rec.residual < params.tol_res
        if converged:
            reason = "converged"
    if on_snapshot and params.snapshot_every and state.step_count % params.snapshot_every:
        on_snapshot(state)
    log.info("flow stopped (%s) at t=%.4g after %d steps, %d rejected",
             reason, state.t, state.step_count, state.rejected)
    return FlowResult(state=state, records=records, converged=converged, reason=reason,
                      c=records[-1].c_t, u_tilde=normalize(problem.geom, state.u),
                      u_extrema=extrema, warnings=notes)


def monitor_max_principle(records, factor=10.0):
    """``max_dtu`` nonincreasing and ``min_dtu`` nondecreasing, up to discretization slack.

    The slack for step ``k`` is ``factor * dt_k * L_k`` where ``L_k`` is the
    observed rate of change of the drift ``c_t`` over that step.
    """
    if len(records) < 2:
        raise ValueError("need at least two records")
    for a, b in zip(records[:-1], records[1:]):
        dt = b.dt if b.dt > 0 else b.t - a.t
        rate = abs(b.c_t - a.c_t) / dt if dt > 0 else 0.0
        tiny = 1e-12 * max(1.0, abs(a.max_dtu), abs(a.min_dtu))
        slack = factor * dt * rate + tiny
        if b.max_dtu > a.max_dtu + slack or b.min_dtu < a.min_dtu - slack:
            return False
    return True


def fit_decay(records, window=0.5, floor=1e-14):
    """Least-squares fit of ``log osc_dtu`` against ``t`` over the trailing window.

    ``window`` is the fraction of the total time span.  Returns ``(eta, r2)``
    with ``eta = -slope``.
    """
    t = np.array([r.t for r in records], dtype=float)
    osc = np.array([r.osc_dtu for r in records], dtype=float)
    if t.size == 0 or not 0 < window <= 1:
        raise ValueError("need records and 0 < window <= 1")
    sel = t >= t[-1] - window * (t[-1] - t[0])
    sel &= osc > floor
    if sel.sum() < 3 or np.ptp(t[sel]) == 0:
        raise AlreadyConverged("oscillation already at the noise floor; nothing to fit")
    x, y = t[sel], np.log(osc[sel])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(-slope), r2


def write_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([repr(float(x)) for x in astuple(r)])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected diagnostics header")
    return [DiagRecord(*map(float, row)) for row in rows[1:]]
