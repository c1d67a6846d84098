import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=150, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_hermitian(rng, n, shape=(), scale=1.0):
    a = rng.normal(size=shape + (n, n)) + 1j * rng.normal(size=shape + (n, n))
    return scale * 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def cone_samples(rng, n, k, count, margin=1e-3, spread=2.0):
    """Random eigenvalue vectors in Gamma_k with sigma_j > margin, sorted descending."""
    from torusflow import symm

    out = []
    while sum(len(o) for o in out) < count:
        lam = rng.normal(size=(4 * count, n)) * spread + rng.uniform(0, spread, size=(4 * count, 1))
        ok = symm.in_cone(lam, k, margin)
        out.append(lam[ok])
    return symm.sort_desc(np.concatenate(out)[:count])


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""

    def report(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
