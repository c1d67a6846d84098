from fractions import Fraction

import numpy as np
import pytest

from torusflow import analysis, oracle, torus
from torusflow.flow import DiagRecord
from torusflow.ops import Case, DomainError, OperatorSpec, classify
from torusflow.torus import ChiSpec, TorusGeometry

from conftest import random_hermitian

BOUNDED_OPS = {
    "J": (OperatorSpec("JQuotient", k=2, ell=1, c_const=1.3), 2),
    "J31": (OperatorSpec("JQuotient", k=3, ell=1, c_const=1.3), 3),
    "Mixed": (OperatorSpec("MixedHessian", k=3, coeffs=(0.5, 1.0), c_const=2.5), 3),
    "LogQ": (OperatorSpec("LogQuotient", k=2, ell=1), 2),
    "LogQ31": (OperatorSpec("LogQuotient", k=3, ell=1), 3),
    "InvQ": (OperatorSpec("InvQuotient", k=3, ell=1), 3),
}


@pytest.mark.parametrize("k", [2, 3])
def test_j_margin_at_reference(k):
    g = TorusGeometry(3, 4)
    rep = analysis.check_subsolution(g, np.eye(3), OperatorSpec("JQuotient", k=k, ell=1, c_const=1.0),
                                     0.0, g.zeros())
    assert rep.is_subsolution and rep.margin == pytest.approx(1 - 1 / k)


def test_scaled_reference_crossing():
    g = TorusGeometry(2, 4)
    op = OperatorSpec("JQuotient", k=2, ell=1, c_const=1.0)
    for t in (0.4, 0.49, 0.51, 0.8):
        rep = analysis.check_subsolution(g, t * np.eye(2), op, 0.0, g.zeros())
        assert rep.margin == pytest.approx(1 - 1 / (2 * t), abs=1e-12)
        assert rep.is_subsolution == (t > 0.5)


def test_unbounded_is_always_subsolution():
    g = TorusGeometry(2, 4)
    rep = analysis.check_subsolution(g, np.eye(2), OperatorSpec("LogMA"), 5.0, g.zeros())
    body = rep.to_json()
    assert body["verdict"] and body["margin"] is None and "unbounded" in body["note"]


def test_shifted_psi_fails():
    g = TorusGeometry(2, 4)
    op = OperatorSpec("JQuotient", k=2, ell=1, c_const=1.0)
    rep = analysis.check_subsolution(g, np.eye(2), op, 1.0, g.zeros())
    assert not rep.is_subsolution and rep.margin == pytest.approx(-0.5)


def test_inadmissible_candidate_raises():
    g = TorusGeometry(2, 4)
    with pytest.raises(DomainError):
        analysis.check_subsolution(g, -np.eye(2), OperatorSpec("JQuotient", k=2, ell=1), 0.0, g.zeros())


def _chi_prime(rng, g, amp=0.15):
    n = g.n
    chi0 = np.eye(n) + 0.2 * random_hermitian(rng, n)
    modes = [(amp * rng.uniform(0.2, 1), list(rng.integers(-1, 2, size=2 * n)), rng.uniform(0, 6))
             for _ in range(3)]
    rho = torus.trig_field(g, modes)
    return ChiSpec(chi0, rho)


@pytest.mark.parametrize("name", list(BOUNDED_OPS))
def test_positivity_matches_subsolution(name, rng):
    op, n = BOUNDED_OPS[name]
    g = TorusGeometry(n, 4)
    done = 0
    while done < 5:
        chi = _chi_prime(rng, g, amp=0.02)
        field = chi.field(g)
        psi = 0.05 * rng.normal(size=g.shape)
        try:
            a = analysis.check_subsolution(g, field, op, psi, g.zeros())
        except DomainError:
            continue
        b = analysis.check_positivity_condition(g, field, op, psi)
        assert b.margin == pytest.approx(a.margin, abs=1e-10)
        assert b.is_subsolution == a.is_subsolution
        assert b.worst_point == a.worst_point
        done += 1


def test_positivity_non_identity_alpha(rng):
    A = np.array([[1.5, 0.3j], [-0.3j, 0.8]])
    g = TorusGeometry(2, 4, A)
    op = OperatorSpec("JQuotient", k=2, ell=1, c_const=1.0)
    chi = ChiSpec(A + 0.1 * random_hermitian(rng, 2))
    a = analysis.check_subsolution(g, chi, op, 0.0, g.zeros())
    b = analysis.check_positivity_condition(g, chi, op, 0.0)
    assert b.margin == pytest.approx(a.margin, abs=1e-10)


def test_positivity_unbounded_note():
    g = TorusGeometry(2, 4)
    rep = analysis.check_positivity_condition(g, np.eye(2), OperatorSpec("LogHessian", k=1), 0.0)
    assert rep.is_subsolution and "vacuous" in rep.note


def test_matrix_sigma_gradients_fd(rng):
    n = 3
    M = random_hermitian(rng, n) + 2 * np.eye(n)
    grads = analysis.matrix_sigma_gradients(M, n)
    h = 1e-6
    for j in range(1, n + 1):
        for p in range(n):
            for q in range(n):
                E = np.zeros((n, n), dtype=complex)
                E[p, q] = 1.0
                E = E + E.conj().T if p != q else E
                fd = (torus.matrix_elementary(M + h * E)[j] - torus.matrix_elementary(M - h * E)[j]) / (2 * h)
                from math import comb
                ref = np.real(np.trace(grads[j] @ E)) * comb(n, j)
                assert fd == pytest.approx(ref, rel=1e-6, abs=1e-8)


def test_functional_trivial_values():
    g = TorusGeometry(2, 4)
    assert analysis.functional_I(g, np.eye(2), g.zeros(), 2).value == 0.0
    phi = np.full(g.shape, 0.3)
    assert analysis.functional_I(g, np.eye(2), phi, 0).value == pytest.approx(0.3 * g.volume)
    assert analysis.functional_I(g, 2 * np.eye(2), phi, 2).value == pytest.approx(0.3 * 4 * g.volume)


def _random_instance(rng, n):
    g = TorusGeometry(n, 6)
    chi = _chi_prime(rng, g, amp=0.1)
    phi = torus.trig_field(g, [(0.1 * rng.normal(), list(rng.integers(-2, 3, size=2 * n)), rng.uniform(0, 6))
                               for _ in range(3)], constant=rng.normal())
    return g, chi, phi


@pytest.mark.parametrize("n", [1, 2])
def test_path_independence(n, rng):
    for _ in range(4):
        g, chi, phi = _random_instance(rng, n)
        eta = torus.trig_field(g, [(0.2, [1] + [0] * (2 * n - 1), 0.4)])
        for k in range(n + 1):
            val = analysis.functional_I(g, chi, phi, k, check_path=True).value
            bent = analysis.path_integral(g, chi, phi, k, path="bent", eta=eta)
            assert bent == pytest.approx(val, abs=1e-8 * max(1, abs(val)))


def test_path_quadrature_exact_with_k_plus_1_nodes(rng):
    g, chi, phi = _random_instance(rng, 2)
    a = analysis.path_integral(g, chi, phi, 2, nodes=3)
    b = analysis.path_integral(g, chi, phi, 2, nodes=12)
    assert a == pytest.approx(b, abs=1e-12)


def test_path_errors():
    g = TorusGeometry(1, 4)
    with pytest.raises(ValueError):
        analysis.path_integral(g, np.eye(1), g.zeros(), 1, path="bent")
    with pytest.raises(ValueError):
        analysis.path_integral(g, np.eye(1), g.zeros(), 1, path="spiral")
    with pytest.raises(ValueError):
        analysis.functional_I(g, np.eye(1), g.zeros(), 2)


@pytest.mark.parametrize("k", range(6))
def test_coefficient_identity(k):
    assert analysis.coefficient_identity(k) == [Fraction(1, k + 1)] * (k + 1)


def _records(h):
    return [DiagRecord(t=float(i), dt=1.0, c_t=0, osc_dtu=0, max_dtu=0, min_dtu=0, cone_margin=1,
                       ellipticity_trace=1, I_k=0, h_t=v, residual=0) for i, v in enumerate(h)]


def test_trajectory_inequalities():
    rep = analysis.trajectory_inequalities(_records([3, 2, 2, 1]), [(0.1, -0.1)] * 4)
    assert rep.sign_ok and rep.h_monotone
    rep = analysis.trajectory_inequalities(_records([3, 2, 2.1, 1]), [(0.1, -0.1), (-0.2, -0.3)] * 2)
    assert not rep.sign_ok and not rep.h_monotone
    assert rep.worst_h_increase == pytest.approx(0.1) and rep.worst_sign_violation == pytest.approx(0.2)
    rep = analysis.trajectory_inequalities(_records([1, 1 + 5e-9]), None)
    assert rep.h_monotone and not rep.checked_sign


def test_oracle_manufactured_logma():
    g = TorusGeometry(2, 8)
    op = OperatorSpec("LogMA")
    ustar = torus.trig_field(g, [(0.012, [1, 0, 0, 1], 0.3), (0.008, [0, -1, 1, 0], 1.1)])
    from torusflow.flow import Problem
    psi = Problem(g, np.eye(2), op).rhs(ustar) + 0.25
    res = oracle.newton_oracle(g, np.eye(2), op, psi)
    assert res.residual <= 1e-10
    assert res.c == pytest.approx(-0.25, abs=1e-10)
    np.testing.assert_allclose(res.u, ustar - ustar.mean(), atol=1e-10)


def test_oracle_non_identity_alpha():
    A = np.array([[1.2, 0.2 + 0.1j], [0.2 - 0.1j, 0.9]])
    g = TorusGeometry(2, 6, A)
    op = OperatorSpec("JQuotient", k=2, ell=1, c_const=1.0)
    ustar = torus.trig_field(g, [(0.01, [1, 0, 0, 1], 0.3)])
    from torusflow.flow import Problem
    psi = Problem(g, A, op).rhs(ustar)
    res = oracle.newton_oracle(g, A, op, psi)
    np.testing.assert_allclose(res.u, ustar - ustar.mean(), atol=1e-10)


def test_oracle_failure_on_inadmissible_start():
    g = TorusGeometry(1, 8)
    u0 = 0.5 * np.cos(2 * np.pi * g.coords()[0]) + g.zeros()
    with pytest.raises(oracle.OracleFailure):
        oracle.newton_oracle(g, np.eye(1), OperatorSpec("LogMA"), 0.0, u_init=u0)


def test_oracle_failure_iteration_budget():
    g = TorusGeometry(1, 8)
    psi = 0.3 * np.cos(2 * np.pi * g.coords()[0]) + g.zeros()
    with pytest.raises(oracle.OracleFailure):
        oracle.newton_oracle(g, np.eye(1), OperatorSpec("LogMA"), psi, max_iter=1, tol=1e-14)


def test_classify_reexport():
    assert classify(OperatorSpec("InvQuotient", k=2, ell=1)) is Case.BOUNDED
